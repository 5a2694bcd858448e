#include "probekit/report.hpp"
#include "probekit/synth.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>

using namespace probekit;

namespace {

struct SweepFlags {
  std::string config_path;
  std::string manifest;
  std::vector<std::string> models;
  std::vector<int> grid;
  bool no_full = false;
  int k = 0;
  double c_param = 0;
  double svm_tol = 0;
  int svm_max_epochs = 0;
  double fraction = 0;
  int d_small = 0;
  double epsilon = 0;
  std::size_t workers = 0;
  std::uint64_t seed = 0;
  std::string output_dir;
  std::int64_t pca_kmax_cap = 0;
  std::size_t pca_subsample = 0;
  double reference_accuracy = 0;
  bool strict = false;
};

void add_run_flags(CLI::App* app, SweepFlags& f, std::map<std::string, CLI::Option*>& opts) {
  opts["config"] = app->add_option("--config", f.config_path, "JSON run config; flags override its fields");
  opts["manifest"] = app->add_option("--manifest", f.manifest, "Layer manifest JSON");
  opts["models"] = app->add_option("--models", f.models, "Subset of knn, ncc, svm")->delimiter(',');
  opts["grid"] = app->add_option("--grid", f.grid, "PCA dimensions to evaluate")->delimiter(',');
  opts["no_full"] = app->add_flag("--no-full", f.no_full, "Skip the unprojected evaluation");
  opts["k"] = app->add_option("--k", f.k, "Neighbours for k-NN");
  opts["c_param"] = app->add_option("--c-param", f.c_param, "SVM soft-margin constant");
  opts["svm_tol"] = app->add_option("--svm-tol", f.svm_tol, "SVM relative duality-gap tolerance");
  opts["svm_max_epochs"] = app->add_option("--svm-max-epochs", f.svm_max_epochs, "SVM epoch limit");
  opts["fraction"] = app->add_option("--fraction", f.fraction, "Share of best accuracy that d_min must reach");
  opts["d_small"] = app->add_option("--d-small", f.d_small, "Largest d counted as few components");
  opts["epsilon"] = app->add_option("--epsilon", f.epsilon, "Relative slack against the reference accuracy");
  opts["workers"] = app->add_option("--workers", f.workers, "Worker threads (default $PROBEKIT_WORKERS or 1)");
  opts["seed"] = app->add_option("--seed", f.seed, "Base seed");
  opts["output_dir"] = app->add_option("--output-dir", f.output_dir, "Directory for report files");
  opts["pca_kmax_cap"] = app->add_option("--pca-kmax-cap", f.pca_kmax_cap, "Upper bound on fitted components");
  opts["pca_subsample"] = app->add_option("--pca-subsample", f.pca_subsample, "Rows used to fit PCA");
  opts["reference_accuracy"] =
      app->add_option("--reference-accuracy", f.reference_accuracy, "Override the manifest network accuracy");
  opts["strict"] = app->add_flag("--strict", f.strict, "Exit 3 when any probe fails to converge");
}

std::optional<std::size_t> env_workers() {
  const char* raw = std::getenv("PROBEKIT_WORKERS");
  if (!raw || !*raw) return std::nullopt;
  char* end = nullptr;
  const long v = std::strtol(raw, &end, 10);
  if (*end != '\0' || v < 1) throw ConfigError(std::string("PROBEKIT_WORKERS must be a positive integer, got '") + raw + "'");
  return static_cast<std::size_t>(v);
}

/// Config file, then flags on top, then the environment for workers.
RunConfig assemble_config(const SweepFlags& f, std::map<std::string, CLI::Option*>& opts,
                          std::vector<std::string>& diags) {
  RunConfig c;
  bool workers_in_file = false;
  if (!f.config_path.empty()) {
    std::ifstream in(f.config_path);
    if (!in) throw ConfigError("config: cannot open " + f.config_path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    c = config_from_json(j, std::filesystem::path(f.config_path).parent_path(), diags);
    workers_in_file = j.is_object() && j.contains("workers");
  }
  auto given = [&](const char* name) { return opts[name]->count() > 0; };
  if (given("manifest")) c.manifest = f.manifest;
  if (given("models")) {
    c.models.clear();
    for (const auto& m : f.models) c.models.push_back(parse_model_kind(m));
  }
  if (given("grid")) c.grid = f.grid;
  if (given("no_full")) c.include_full = !f.no_full;
  if (given("k")) c.k = f.k;
  if (given("c_param")) c.c_param = f.c_param;
  if (given("svm_tol")) c.svm_tol = f.svm_tol;
  if (given("svm_max_epochs")) c.svm_max_epochs = f.svm_max_epochs;
  if (given("fraction")) c.fraction = f.fraction;
  if (given("d_small")) c.d_small = f.d_small;
  if (given("epsilon")) c.epsilon = f.epsilon;
  if (given("seed")) c.seed = f.seed;
  if (given("output_dir")) c.output_dir = f.output_dir;
  if (given("pca_kmax_cap")) c.pca_kmax_cap = f.pca_kmax_cap;
  if (given("pca_subsample")) c.pca_subsample = f.pca_subsample;
  if (given("reference_accuracy")) c.reference_accuracy = f.reference_accuracy;
  if (given("strict")) c.strict = f.strict;
  if (given("workers")) {
    c.workers = f.workers;
  } else if (!workers_in_file) {
    if (auto w = env_workers()) c.workers = *w;
  }
  return c;
}

int print_diagnostics(const std::vector<std::string>& diags) {
  for (const auto& d : diags) std::cerr << "config error: " << d << '\n';
  return 2;
}

int cmd_sweep(const SweepFlags& f, std::map<std::string, CLI::Option*>& opts) {
  std::vector<std::string> diags;
  const RunConfig config = assemble_config(f, opts, diags);
  if (!diags.empty()) return print_diagnostics(diags);
  return run_pipeline(config, std::cerr);
}

int cmd_validate(const SweepFlags& f, std::map<std::string, CLI::Option*>& opts) {
  std::vector<std::string> diags;
  const RunConfig config = assemble_config(f, opts, diags);
  for (auto& d : check_config(config)) diags.push_back(std::move(d));
  if (!diags.empty()) return print_diagnostics(diags);
  std::cout << config_to_json(config).dump(2) << '\n';
  return 0;
}

struct CollapseFlags {
  std::string report;
  std::string output_dir;
  double reference_accuracy = 0;
  int d_small = 10;
  double epsilon = 0.02;
};

int cmd_collapse(const CollapseFlags& f, const CLI::Option* reference_opt) {
  FullReport report = read_report(f.report);
  std::optional<double> reference = report.sweep.reference_accuracy;
  if (reference_opt->count() > 0) reference = f.reference_accuracy;
  if (!reference) throw ConfigError("reference-accuracy: required (report has no network accuracy)");
  detect_collapse_layer(report.sweep, *reference, f.d_small, f.epsilon);  // throws on missing curves
  report.collapse = build_collapse_report(report.sweep, *reference, f.d_small, f.epsilon);
  report.config["reference_accuracy"] = *reference;
  report.config["d_small"] = f.d_small;
  report.config["epsilon"] = f.epsilon;

  const std::filesystem::path out =
      f.output_dir.empty() ? std::filesystem::path(f.report).parent_path() : std::filesystem::path(f.output_dir);
  if (!out.empty()) std::filesystem::create_directories(out);
  write_report(report, out / "report.json");
  write_collapse_csv(*report.collapse, out / "collapse.csv");
  std::cout << report.collapse->describe_boundary() << '\n';
  return 0;
}

struct SynthFlags {
  std::string spec_path;
  std::string out_dir;
  std::uint64_t seed = 0;
};

int cmd_synth(const SynthFlags& f, const CLI::Option* seed_opt) {
  LayerFamilySpec spec = collapse_demo_spec();
  if (!f.spec_path.empty()) {
    std::ifstream in(f.spec_path);
    if (!in) throw ConfigError("spec: cannot open " + f.spec_path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("spec: invalid JSON: ") + e.what());
    }
    spec = layer_family_spec_from_json(j);
  }
  if (seed_opt->count() > 0) spec.seed = f.seed;
  const Manifest manifest = write_layer_family(spec, f.out_dir);
  std::cout << "wrote " << manifest.layers.size() << " layers to " << f.out_dir << '\n';
  return 0;
}

int cmd_plot_data(const std::string& report_path, const std::string& out_dir) {
  const FullReport report = read_report(report_path);
  for (const auto& p : emit_plot_data(report, out_dir)) std::cout << p.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layerwise PCA probing and collapse detection"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  SweepFlags sweep_flags;
  std::map<std::string, CLI::Option*> sweep_opts;
  auto* sweep = app.add_subcommand("sweep", "Run the PCA probe sweep and write the report");
  add_run_flags(sweep, sweep_flags, sweep_opts);

  SweepFlags validate_flags;
  std::map<std::string, CLI::Option*> validate_opts;
  auto* validate = app.add_subcommand("validate", "Check a run config and print it normalized");
  add_run_flags(validate, validate_flags, validate_opts);

  CollapseFlags collapse_flags;
  auto* collapse = app.add_subcommand("collapse", "Recompute collapse detection on a saved report");
  collapse->add_option("--report", collapse_flags.report, "report.json from a sweep")->required();
  collapse->add_option("--output-dir", collapse_flags.output_dir, "Defaults to the report's directory");
  auto* reference_opt = collapse->add_option("--reference-accuracy", collapse_flags.reference_accuracy);
  collapse->add_option("--d-small", collapse_flags.d_small);
  collapse->add_option("--epsilon", collapse_flags.epsilon);

  SynthFlags synth_flags;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic layer family");
  synth->add_option("--spec", synth_flags.spec_path, "LayerFamilySpec JSON (default: built-in collapse demo)");
  synth->add_option("--out", synth_flags.out_dir, "Output directory")->required();
  auto* seed_opt = synth->add_option("--seed", synth_flags.seed, "Overrides the spec seed");

  std::string plot_report;
  std::string plot_out;
  auto* plot = app.add_subcommand("plot-data", "Write figure-ready CSVs from a report");
  plot->add_option("--report", plot_report)->required();
  plot->add_option("--out", plot_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*sweep) return cmd_sweep(sweep_flags, sweep_opts);
    if (*validate) return cmd_validate(validate_flags, validate_opts);
    if (*collapse) return cmd_collapse(collapse_flags, reference_opt);
    if (*synth) return cmd_synth(synth_flags, seed_opt);
    if (*plot) return cmd_plot_data(plot_report, plot_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 2;
}
