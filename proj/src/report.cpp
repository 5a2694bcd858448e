#include "probekit/report.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>

namespace probekit {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

namespace {

const std::set<std::string> kConfigFields = {
    "manifest", "models",  "grid",   "include_full", "k",           "c_param",      "svm_tol",
    "svm_max_epochs", "fraction", "d_small", "epsilon", "workers", "seed", "output_dir",
    "pca_kmax_cap", "pca_subsample", "reference_accuracy", "strict"};

template <typename T>
void read_field(const json& j, const char* name, T& out, std::vector<std::string>& diags, const char* type) {
  if (!j.contains(name) || j[name].is_null()) return;
  try {
    out = j[name].get<T>();
  } catch (const json::exception&) {
    diags.push_back(std::string(name) + ": expected " + type);
  }
}

template <typename T>
void read_optional(const json& j, const char* name, std::optional<T>& out, std::vector<std::string>& diags,
                   const char* type) {
  if (!j.contains(name) || j[name].is_null()) return;
  T value{};
  read_field(j, name, value, diags, type);
  out = value;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path fp(p);
  return fp.is_absolute() || base.empty() ? fp : base / fp;
}

}  // namespace

RunConfig config_from_json(const json& j, const std::filesystem::path& base_dir, std::vector<std::string>& diags) {
  RunConfig c;
  if (!j.is_object()) {
    diags.push_back("config: expected a JSON object");
    return c;
  }
  for (const auto& [key, value] : j.items())
    if (!kConfigFields.count(key)) diags.push_back(key + ": unknown field");

  std::string manifest;
  read_field(j, "manifest", manifest, diags, "string");
  if (!manifest.empty()) c.manifest = resolve(base_dir, manifest);

  if (j.contains("models") && !j["models"].is_null()) {
    std::vector<std::string> names;
    read_field(j, "models", names, diags, "array of strings");
    c.models.clear();
    for (const auto& name : names) {
      try {
        c.models.push_back(parse_model_kind(name));
      } catch (const ConfigError& e) {
        diags.push_back(std::string("models: ") + e.what());
      }
    }
  }
  read_optional(j, "grid", c.grid, diags, "array of integers");
  read_field(j, "include_full", c.include_full, diags, "boolean");
  read_field(j, "k", c.k, diags, "integer");
  read_field(j, "c_param", c.c_param, diags, "number");
  read_field(j, "svm_tol", c.svm_tol, diags, "number");
  read_field(j, "svm_max_epochs", c.svm_max_epochs, diags, "integer");
  read_field(j, "fraction", c.fraction, diags, "number");
  read_field(j, "d_small", c.d_small, diags, "integer");
  read_field(j, "epsilon", c.epsilon, diags, "number");
  read_field(j, "workers", c.workers, diags, "positive integer");
  read_field(j, "seed", c.seed, diags, "unsigned integer");
  std::string out_dir;
  read_field(j, "output_dir", out_dir, diags, "string");
  if (!out_dir.empty()) c.output_dir = resolve(base_dir, out_dir);
  read_field(j, "pca_kmax_cap", c.pca_kmax_cap, diags, "integer");
  read_optional(j, "pca_subsample", c.pca_subsample, diags, "integer");
  read_optional(j, "reference_accuracy", c.reference_accuracy, diags, "number");
  read_field(j, "strict", c.strict, diags, "boolean");
  return c;
}

json config_to_json(const RunConfig& c) {
  json models = json::array();
  for (ModelKind m : c.models) models.push_back(std::string(to_string(m)));
  return {{"manifest", c.manifest.generic_string()},
          {"models", models},
          {"grid", c.grid ? json(*c.grid) : json()},
          {"include_full", c.include_full},
          {"k", c.k},
          {"c_param", c.c_param},
          {"svm_tol", c.svm_tol},
          {"svm_max_epochs", c.svm_max_epochs},
          {"fraction", c.fraction},
          {"d_small", c.d_small},
          {"epsilon", c.epsilon},
          {"workers", c.workers},
          {"seed", c.seed},
          {"output_dir", c.output_dir.generic_string()},
          {"pca_kmax_cap", c.pca_kmax_cap},
          {"pca_subsample", c.pca_subsample ? json(*c.pca_subsample) : json()},
          {"reference_accuracy", c.reference_accuracy ? json(*c.reference_accuracy) : json()},
          {"strict", c.strict}};
}

std::vector<std::string> check_config(const RunConfig& c, bool check_files) {
  std::vector<std::string> d;
  if (c.manifest.empty()) {
    d.emplace_back("manifest: required");
  } else if (check_files) {
    if (!std::filesystem::exists(c.manifest)) {
      d.push_back("manifest: file not found: " + c.manifest.string());
    } else {
      try {
        const Manifest m = read_manifest(c.manifest);
        for (const auto& layer : m.layers) {
          if (!std::filesystem::exists(layer.train_path))
            d.push_back("manifest: layer " + layer.layer_id + " train file not found: " + layer.train_path.string());
          if (!std::filesystem::exists(layer.test_path))
            d.push_back("manifest: layer " + layer.layer_id + " test file not found: " + layer.test_path.string());
        }
      } catch (const Error& e) {
        d.push_back(std::string("manifest: ") + e.what());
      }
    }
  }
  if (c.models.empty()) d.emplace_back("models: must list at least one of knn, ncc, svm");
  if (std::set<ModelKind>(c.models.begin(), c.models.end()).size() != c.models.size())
    d.emplace_back("models: duplicate entries");
  if (c.grid) {
    if (c.grid->empty()) d.emplace_back("grid: must list at least one d");
    for (std::size_t i = 0; i < c.grid->size(); ++i) {
      if ((*c.grid)[i] < 1) d.emplace_back("grid: values must be >= 1");
      if (i > 0 && (*c.grid)[i] <= (*c.grid)[i - 1]) d.emplace_back("grid: values must be strictly increasing");
    }
  }
  if (c.k < 1) d.emplace_back("k must be ≥ 1");
  if (!(c.c_param > 0)) d.emplace_back("c_param must be > 0");
  if (!(c.svm_tol > 0)) d.emplace_back("svm_tol must be > 0");
  if (c.svm_max_epochs < 1) d.emplace_back("svm_max_epochs must be ≥ 1");
  if (!(c.fraction > 0 && c.fraction <= 1)) d.emplace_back("fraction must be in (0, 1]");
  if (c.d_small < 1) d.emplace_back("d_small must be ≥ 1");
  if (!(c.epsilon >= 0 && c.epsilon < 1)) d.emplace_back("epsilon must be in [0, 1)");
  if (c.workers < 1) d.emplace_back("workers must be ≥ 1");
  if (c.pca_kmax_cap < 1) d.emplace_back("pca_kmax_cap must be ≥ 1");
  if (c.pca_subsample && *c.pca_subsample < 2) d.emplace_back("pca_subsample must be ≥ 2");
  if (c.reference_accuracy && !(*c.reference_accuracy > 0 && *c.reference_accuracy <= 1))
    d.emplace_back("reference_accuracy must be in (0, 1]");
  if (c.output_dir.empty()) d.emplace_back("output_dir: required");
  return d;
}

ConfigResult validate_config(const std::filesystem::path& path) {
  ConfigResult result;
  std::ifstream in(path);
  if (!in) {
    result.diagnostics.push_back("config: cannot open " + path.string());
    return result;
  }
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    result.diagnostics.push_back(std::string("config: invalid JSON: ") + e.what());
    return result;
  }
  RunConfig c = config_from_json(j, path.parent_path(), result.diagnostics);
  for (auto& msg : check_config(c)) result.diagnostics.push_back(std::move(msg));
  result.config = std::move(c);
  return result;
}

// ---------------------------------------------------------------------------
// Report (de)serialization

namespace {

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(); }

std::optional<double> read_optional_number(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

json layer_to_json(const LayerSummary& l, std::size_t index) {
  json profile = json::array();
  for (const auto& v : l.nc1_profile) profile.push_back(optional_number(v));
  return {{"index", index},
          {"layer_id", l.layer_id},
          {"tap_point", l.tap_point},
          {"dim", l.dim},
          {"n_train", l.n_train},
          {"n_test", l.n_test},
          {"n_classes", l.n_classes},
          {"k_max", l.k_max},
          {"grid", l.grid},
          {"variance_cumulative", l.variance_cumulative},
          {"nc1_ratio", optional_number(l.nc1_ratio)},
          {"nc1_profile", profile},
          {"nc4_agreement", optional_number(l.nc4_agreement)}};
}

LayerSummary layer_from_json(const json& j) {
  LayerSummary l;
  l.layer_id = j.at("layer_id").get<std::string>();
  l.tap_point = j.value("tap_point", "");
  l.dim = j.at("dim").get<int>();
  l.n_train = j.at("n_train").get<int>();
  l.n_test = j.at("n_test").get<int>();
  l.n_classes = j.at("n_classes").get<int>();
  l.k_max = j.at("k_max").get<int>();
  l.grid = j.at("grid").get<std::vector<int>>();
  l.variance_cumulative = j.at("variance_cumulative").get<std::vector<double>>();
  l.nc1_ratio = read_optional_number(j.at("nc1_ratio"));
  for (const auto& v : j.at("nc1_profile")) l.nc1_profile.push_back(read_optional_number(v));
  l.nc4_agreement = read_optional_number(j.at("nc4_agreement"));
  return l;
}

json curve_to_json(const AccuracyCurve& c) {
  json points = json::array();
  for (const auto& pt : c.points) points.push_back({{"d", pt.d}, {"accuracy", pt.accuracy}});
  return {{"layer_id", c.layer_id},
          {"model", std::string(to_string(c.model))},
          {"points", points},
          {"full_dim_accuracy", optional_number(c.full_dim_accuracy)}};
}

AccuracyCurve curve_from_json(const json& j) {
  AccuracyCurve c;
  c.layer_id = j.at("layer_id").get<std::string>();
  c.model = parse_model_kind(j.at("model").get<std::string>());
  for (const auto& pt : j.at("points")) c.points.push_back({pt.at("d").get<int>(), pt.at("accuracy").get<double>()});
  c.full_dim_accuracy = read_optional_number(j.at("full_dim_accuracy"));
  return c;
}

json min_pc_to_json(const MinPcStat& s) {
  return {{"layer_id", s.layer_id},       {"model", std::string(to_string(s.model))},
          {"best_accuracy", s.best_accuracy}, {"threshold", s.threshold},
          {"d_min", s.d_min},             {"variance_at_d_min", s.variance_at_d_min},
          {"on_grid", s.on_grid}};
}

MinPcStat min_pc_from_json(const json& j) {
  MinPcStat s;
  s.layer_id = j.at("layer_id").get<std::string>();
  s.model = parse_model_kind(j.at("model").get<std::string>());
  s.best_accuracy = j.at("best_accuracy").get<double>();
  s.threshold = j.at("threshold").get<double>();
  s.d_min = j.at("d_min").get<int>();
  s.variance_at_d_min = j.at("variance_at_d_min").get<double>();
  s.on_grid = j.at("on_grid").get<bool>();
  return s;
}

json collapse_to_json(const CollapseReport& c) {
  json layers = json::array();
  for (const auto& l : c.layers) {
    json acc = json::object();
    for (const auto& [model, value] : l.accuracy_at_d_small) acc[std::string(to_string(model))] = value;
    layers.push_back({{"layer_id", l.layer_id},
                      {"nc1_ratio", optional_number(l.nc1_ratio)},
                      {"nc4_agreement", optional_number(l.nc4_agreement)},
                      {"accuracy_at_d_small", acc},
                      {"meets_reference", l.meets_reference}});
  }
  return {{"d_small", c.d_small},
          {"epsilon", c.epsilon},
          {"reference_accuracy", c.reference_accuracy},
          {"boundary", c.boundary ? json::array({c.boundary->first, c.boundary->second}) : json()},
          {"boundary_text", c.describe_boundary()},
          {"layers", layers}};
}

CollapseReport collapse_from_json(const json& j) {
  CollapseReport c;
  c.d_small = j.at("d_small").get<int>();
  c.epsilon = j.at("epsilon").get<double>();
  c.reference_accuracy = j.at("reference_accuracy").get<double>();
  if (!j.at("boundary").is_null()) c.boundary = CollapseBoundary{j["boundary"][0].get<int>(), j["boundary"][1].get<int>()};
  for (const auto& lj : j.at("layers")) {
    CollapseLayer l;
    l.layer_id = lj.at("layer_id").get<std::string>();
    l.nc1_ratio = read_optional_number(lj.at("nc1_ratio"));
    l.nc4_agreement = read_optional_number(lj.at("nc4_agreement"));
    for (const auto& [name, value] : lj.at("accuracy_at_d_small").items())
      l.accuracy_at_d_small[parse_model_kind(name)] = value.get<double>();
    l.meets_reference = lj.at("meets_reference").get<bool>();
    c.layers.push_back(std::move(l));
  }
  return c;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

}  // namespace

json to_json(const FullReport& r) {
  json layers = json::array();
  for (std::size_t i = 0; i < r.sweep.layers.size(); ++i) layers.push_back(layer_to_json(r.sweep.layers[i], i));
  json curves = json::array();
  for (const auto& c : r.sweep.curves) curves.push_back(curve_to_json(c));
  json min_pcs = json::array();
  for (const auto& s : r.min_pcs) min_pcs.push_back(min_pc_to_json(s));
  return {{"tool", "probekit"},
          {"version", r.version},
          {"timestamp", r.timestamp},
          {"seed", r.sweep.seed},
          {"config", r.config},
          {"reference_accuracy", optional_number(r.sweep.reference_accuracy)},
          {"layers", layers},
          {"curves", curves},
          {"min_pcs", min_pcs},
          {"collapse", r.collapse ? collapse_to_json(*r.collapse) : json()},
          {"warnings", r.sweep.warnings},
          {"notes", r.sweep.notes}};
}

FullReport report_from_json(const json& j) {
  FullReport r;
  try {
    r.version = j.at("version").get<std::string>();
    r.timestamp = j.at("timestamp").get<std::string>();
    r.config = j.at("config");
    r.sweep.seed = j.at("seed").get<std::uint64_t>();
    r.sweep.reference_accuracy = read_optional_number(j.at("reference_accuracy"));
    for (const auto& l : j.at("layers")) r.sweep.layers.push_back(layer_from_json(l));
    for (const auto& c : j.at("curves")) r.sweep.curves.push_back(curve_from_json(c));
    for (const auto& s : j.at("min_pcs")) r.min_pcs.push_back(min_pc_from_json(s));
    if (!j.at("collapse").is_null()) r.collapse = collapse_from_json(j["collapse"]);
    r.sweep.warnings = j.at("warnings").get<std::vector<std::string>>();
    r.sweep.notes = j.at("notes").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
  return r;
}

FullReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open report '" + path.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("report '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return report_from_json(j);
}

void write_report(const FullReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out << to_json(report).dump(2) << '\n';
  if (!out.flush()) throw DataError("I/O failure writing '" + path.string() + "'");
}

std::vector<MinPcStat> compute_min_pcs(const SweepReport& sweep, double fraction) {
  std::vector<MinPcStat> stats;
  for (const auto& curve : sweep.curves) {
    const auto layer = std::find_if(sweep.layers.begin(), sweep.layers.end(),
                                    [&](const LayerSummary& l) { return l.layer_id == curve.layer_id; });
    if (layer == sweep.layers.end()) throw DataError("curve for unknown layer " + curve.layer_id);
    stats.push_back(min_pcs_for_fraction(
        curve, fraction, [&](int d) { return layer->variance_at(d); }, layer->dim));
  }
  return stats;
}

// ---------------------------------------------------------------------------
// CSV

std::string format_number(double value) { return json(value).dump(); }

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

std::string csv_number(const std::optional<double>& v) { return v ? format_number(*v) : std::string(); }

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, std::initializer_list<const char*> header) : path_(path), out_(path) {
    if (!out_) throw DataError("cannot open '" + path.string() + "' for writing");
    bool first = true;
    for (const char* h : header) {
      out_ << (first ? "" : ",") << h;
      first = false;
    }
    out_ << "\r\n";
  }

  void row(std::initializer_list<std::string> cells) {
    bool first = true;
    for (const auto& c : cells) {
      out_ << (first ? "" : ",") << c;
      first = false;
    }
    out_ << "\r\n";
  }

  ~CsvWriter() = default;

  void close() {
    if (!out_.flush()) throw DataError("I/O failure writing '" + path_.string() + "'");
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

int layer_index(const SweepReport& sweep, const std::string& layer_id) {
  for (std::size_t i = 0; i < sweep.layers.size(); ++i)
    if (sweep.layers[i].layer_id == layer_id) return static_cast<int>(i);
  return -1;
}

}  // namespace

void write_curves_csv(const FullReport& report, const std::filesystem::path& path) {
  CsvWriter csv(path, {"layer", "model", "d", "accuracy"});
  for (const auto& c : report.sweep.curves)
    for (const auto& pt : c.points)
      csv.row({csv_field(c.layer_id), std::string(to_string(c.model)), std::to_string(pt.d), format_number(pt.accuracy)});
  csv.close();
}

void write_min_pcs_csv(const FullReport& report, const std::filesystem::path& path) {
  CsvWriter csv(path, {"layer", "model", "best_acc", "threshold", "d_min", "variance_at_d_min"});
  for (const auto& s : report.min_pcs)
    csv.row({csv_field(s.layer_id), std::string(to_string(s.model)), format_number(s.best_accuracy),
             format_number(s.threshold), std::to_string(s.d_min), format_number(s.variance_at_d_min)});
  csv.close();
}

void write_collapse_csv(const CollapseReport& collapse, const std::filesystem::path& path) {
  CsvWriter csv(path, {"layer", "nc1_ratio", "nc4_agreement", "acc_knn_d_small", "acc_ncc_d_small", "acc_svm_d_small"});
  for (const auto& l : collapse.layers) {
    auto acc = [&](ModelKind m) {
      const auto it = l.accuracy_at_d_small.find(m);
      return it == l.accuracy_at_d_small.end() ? std::string() : format_number(it->second);
    };
    csv.row({csv_field(l.layer_id), csv_number(l.nc1_ratio), csv_number(l.nc4_agreement), acc(ModelKind::Knn),
             acc(ModelKind::Ncc), acc(ModelKind::Svm)});
  }
  csv.close();
}

std::vector<std::filesystem::path> emit_plot_data(const FullReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto& sweep = report.sweep;
  const auto acc_path = dir / "accuracy_vs_d.csv";
  const auto pcs_path = dir / "pcs_for_fraction.csv";
  const auto var_path = dir / "variance_for_fraction.csv";
  {
    CsvWriter csv(acc_path, {"layer_index", "layer", "model", "d", "accuracy"});
    for (const auto& c : sweep.curves)
      for (const auto& pt : c.points)
        csv.row({std::to_string(layer_index(sweep, c.layer_id)), csv_field(c.layer_id), std::string(to_string(c.model)),
                 std::to_string(pt.d), format_number(pt.accuracy)});
    csv.close();
  }
  {
    CsvWriter csv(pcs_path, {"layer_index", "layer", "model", "d_min"});
    for (const auto& s : report.min_pcs)
      csv.row({std::to_string(layer_index(sweep, s.layer_id)), csv_field(s.layer_id), std::string(to_string(s.model)),
               std::to_string(s.d_min)});
    csv.close();
  }
  {
    CsvWriter csv(var_path, {"layer_index", "layer", "model", "variance_at_d_min"});
    for (const auto& s : report.min_pcs)
      csv.row({std::to_string(layer_index(sweep, s.layer_id)), csv_field(s.layer_id), std::string(to_string(s.model)),
               format_number(s.variance_at_d_min)});
    csv.close();
  }
  return {acc_path, pcs_path, var_path};
}

// ---------------------------------------------------------------------------
// Pipeline

FullReport build_report(const RunConfig& config, const SweepReport& sweep) {
  FullReport report;
  report.timestamp = utc_timestamp();
  report.config = config_to_json(config);
  report.sweep = sweep;
  report.min_pcs = compute_min_pcs(sweep, config.fraction);

  const std::optional<double> reference = config.reference_accuracy ? config.reference_accuracy : sweep.reference_accuracy;
  if (reference) {
    report.collapse = build_collapse_report(sweep, *reference, config.d_small, config.epsilon);
    bool all_models = true;
    for (ModelKind m : kAllModels)
      all_models = all_models && std::find(config.models.begin(), config.models.end(), m) != config.models.end();
    if (!all_models)
      report.sweep.notes.push_back("collapse boundary needs knn, ncc and svm curves; not all were requested");
  } else {
    report.sweep.notes.push_back("no reference accuracy in manifest or config; collapse detection skipped");
  }
  return report;
}

int run_pipeline(const RunConfig& config, std::ostream& log) {
  try {
    const auto diagnostics = check_config(config);
    if (!diagnostics.empty()) {
      for (const auto& d : diagnostics) log << "config error: " << d << '\n';
      return 2;
    }
    const Manifest manifest = read_manifest(config.manifest);
    std::filesystem::create_directories(config.output_dir);

    SweepOptions options;
    options.models = config.models;
    options.grid = config.grid;
    options.include_full = config.include_full;
    options.k = config.k;
    options.c_param = config.c_param;
    options.svm_tol = config.svm_tol;
    options.svm_max_epochs = config.svm_max_epochs;
    options.seed = config.seed;
    options.workers = config.workers;
    options.pca_kmax_cap = config.pca_kmax_cap;
    options.pca_subsample = config.pca_subsample;
    options.journal_path = config.output_dir / "journal.jsonl";
    options.pca_cache_dir = config.output_dir / "pca";

    const SweepReport sweep = run_sweep(manifest, options);
    const FullReport report = build_report(config, sweep);

    write_report(report, config.output_dir / "report.json");
    write_curves_csv(report, config.output_dir / "curves.csv");
    write_min_pcs_csv(report, config.output_dir / "min_pcs.csv");
    write_collapse_csv(report.collapse.value_or(CollapseReport{}), config.output_dir / "collapse.csv");

    log << "layers: " << sweep.layers.size() << ", curves: " << sweep.curves.size() << '\n';
    if (report.collapse) log << report.collapse->describe_boundary() << '\n';
    const auto& warnings = report.sweep.warnings;
    constexpr std::size_t kShown = 5;
    for (std::size_t i = 0; i < std::min(warnings.size(), kShown); ++i) log << "warning: " << warnings[i] << '\n';
    if (warnings.size() > kShown) log << "... " << warnings.size() - kShown << " more warnings in report.json\n";
    log << "wrote " << (config.output_dir / "report.json").string() << '\n';
    if (config.strict && !report.sweep.warnings.empty()) return 3;
    return 0;
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return 3;
  }
}

}  // namespace probekit
