#include "probekit/sweep.hpp"

#include "probekit/collapse.hpp"
#include "probekit/preprocess.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

namespace probekit {

SweepGrid default_grid(std::int64_t layer_dim) {
  if (layer_dim < 1) throw ConfigError("default_grid: layer_dim must be >= 1");
  static constexpr int kHead[] = {1,   2,   3,   4,   5,   6,   7,    8,    9,    10,   11,   12,  13,
                                  14,  15,  16,  17,  18,  19,  20,   30,   40,   50,   100,  150, 200,
                                  250, 300, 400, 500, 750, 1000, 1250, 1500, 1750, 2000};
  SweepGrid grid;
  for (int d : kHead) {
    if (d > layer_dim) break;
    grid.dims.push_back(d);
  }
  for (std::int64_t d = 3000; d <= layer_dim; d += 1000) grid.dims.push_back(static_cast<int>(d));
  if (grid.dims.empty() || grid.dims.back() != layer_dim) grid.dims.push_back(static_cast<int>(layer_dim));
  grid.include_full = true;
  return grid;
}

void validate_grid(const std::vector<int>& dims, std::int64_t layer_dim) {
  if (dims.empty()) throw ConfigError("grid: must list at least one d");
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (dims[i] < 1) throw ConfigError("grid: d must be >= 1, got " + std::to_string(dims[i]));
    if (i > 0 && dims[i] <= dims[i - 1]) throw ConfigError("grid: values must be strictly increasing");
    if (dims[i] > layer_dim)
      throw ConfigError("grid: d " + std::to_string(dims[i]) + " exceeds layer dim " + std::to_string(layer_dim));
  }
}

std::optional<double> AccuracyCurve::accuracy_at(int d) const {
  for (const auto& pt : points)
    if (pt.d == d) return pt.accuracy;
  return std::nullopt;
}

double LayerSummary::variance_at(int d) const {
  for (std::size_t i = 0; i < grid.size(); ++i)
    if (grid[i] == d) return variance_cumulative[i];
  if (d >= dim) return 1.0;
  throw DataError("layer " + layer_id + ": no explained-variance entry for d " + std::to_string(d));
}

const AccuracyCurve* SweepReport::find_curve(const std::string& layer_id, ModelKind model) const {
  for (const auto& c : curves)
    if (c.layer_id == layer_id && c.model == model) return &c;
  return nullptr;
}

namespace {

// Absorbs the rounding in fraction * best (e.g. 0.9 * 0.96).
constexpr double kThresholdSlack = 1e-12;

}  // namespace

MinPcStat min_pcs_for_fraction(const AccuracyCurve& curve, double fraction,
                               const std::function<double(int)>& variance_at, int layer_dim) {
  if (curve.points.empty() && !curve.full_dim_accuracy) throw DataError("min_pcs_for_fraction: empty curve");
  MinPcStat stat;
  stat.layer_id = curve.layer_id;
  stat.model = curve.model;
  stat.best_accuracy = curve.full_dim_accuracy.value_or(0.0);
  for (const auto& pt : curve.points) stat.best_accuracy = std::max(stat.best_accuracy, pt.accuracy);
  stat.threshold = fraction * stat.best_accuracy;
  for (const auto& pt : curve.points) {
    if (pt.accuracy >= stat.threshold - kThresholdSlack) {
      stat.d_min = pt.d;
      stat.variance_at_d_min = variance_at(pt.d);
      stat.on_grid = true;
      return stat;
    }
  }
  stat.d_min = layer_dim;
  stat.variance_at_d_min = 1.0;
  stat.on_grid = false;
  return stat;
}

MinPcStat min_pcs_for_fraction(const AccuracyCurve& curve, double fraction, const PcaModel<double>& pca) {
  return min_pcs_for_fraction(
      curve, fraction, [&](int d) { return explained_variance_cumulative(pca, d); },
      static_cast<int>(pca.dim()));
}

// ---------------------------------------------------------------------------

CellJournal::CellJournal(std::filesystem::path path) : path_(std::move(path)) {
  if (std::filesystem::exists(*path_))
    for (const auto& r : read_all(*path_)) done_[{r.layer_id, r.model, r.d, r.seed}] = r.accuracy;
}

std::vector<CellJournal::Record> CellJournal::read_all(const std::filesystem::path& path) {
  std::vector<Record> records;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Record r;
      r.layer_id = j.at("layer_id").get<std::string>();
      r.model = parse_model_kind(j.at("model").get<std::string>());
      r.d = j.at("d").get<int>();
      r.accuracy = j.at("accuracy").get<double>();
      r.wall_ms = j.value("wall_ms", 0.0);
      r.seed = j.at("seed").get<std::uint64_t>();
      records.push_back(std::move(r));
    } catch (const std::exception&) {
      // Torn write from an interrupted run; the cell is simply recomputed.
    }
  }
  return records;
}

std::optional<double> CellJournal::lookup(const std::string& layer_id, ModelKind model, int d,
                                          std::uint64_t seed) const {
  std::lock_guard lock(mutex_);
  const auto it = done_.find({layer_id, model, d, seed});
  if (it == done_.end()) return std::nullopt;
  return it->second;
}

void CellJournal::append(const Record& r) {
  std::lock_guard lock(mutex_);
  done_[{r.layer_id, r.model, r.d, r.seed}] = r.accuracy;
  if (!path_) return;
  const nlohmann::json j = {{"layer_id", r.layer_id}, {"model", std::string(to_string(r.model))},
                            {"d", r.d},               {"accuracy", r.accuracy},
                            {"wall_ms", r.wall_ms},   {"seed", r.seed}};
  std::ofstream out(*path_, std::ios::app);
  out << j.dump() << '\n';
  if (!out.flush()) throw DataError("I/O failure appending to journal '" + path_->string() + "'");
}

std::size_t CellJournal::size() const {
  std::lock_guard lock(mutex_);
  return done_.size();
}

// ---------------------------------------------------------------------------

namespace {

using ConstRef = Eigen::Ref<const RowMatrix<double>>;

struct Cell {
  ModelKind model;
  int d;  // 0 = unprojected
};

double run_cell(ModelKind model, const ConstRef& train, const Labels& train_labels, const ConstRef& test,
                const Labels& test_labels, int n_classes, const SweepOptions& options, std::uint64_t seed,
                std::string* warning) {
  switch (model) {
    case ModelKind::Knn: {
      const auto m = fit_knn<double>(train, train_labels, options.k, n_classes);
      return evaluate_accuracy(predict_knn(m, test), test_labels);
    }
    case ModelKind::Ncc: {
      const auto m = fit_ncc<double>(train, train_labels, n_classes);
      return evaluate_accuracy(predict_ncc(m, test), test_labels);
    }
    case ModelKind::Svm: {
      SvmOptions svm;
      svm.c_param = options.c_param;
      svm.tol = options.svm_tol;
      svm.max_epochs = options.svm_max_epochs;
      svm.seed = seed;
      const auto m = fit_linear_svm<double>(train, train_labels, svm, n_classes);
      if (!m.converged()) {
        std::ostringstream msg;
        msg << "svm did not converge in " << options.svm_max_epochs << " epochs; worst relative duality gap ";
        double worst = 0;
        for (const auto& f : m.fit_info)
          if (!f.converged) worst = std::max(worst, f.duality_gap / std::max(f.primal_objective, 1e-300));
        msg << worst;
        *warning = msg.str();
      }
      return evaluate_accuracy(predict_svm(m, test), test_labels);
    }
  }
  throw Error("unreachable model kind");
}

PcaModel<double> fit_or_load_pca(const RowMatrix<double>& train, int k_max, const SweepOptions& options,
                                 std::size_t layer_index) {
  std::optional<std::filesystem::path> cache;
  if (options.pca_cache_dir) {
    std::filesystem::create_directories(*options.pca_cache_dir);
    cache = *options.pca_cache_dir / ("layer" + std::to_string(layer_index) + ".pca");
  }
  const std::uint64_t expected_n =
      options.pca_subsample ? std::min<std::uint64_t>(*options.pca_subsample, train.rows()) : train.rows();
  if (cache && std::filesystem::exists(*cache)) {
    try {
      auto model = load_pca(*cache);
      if (model.dim() == train.cols() && model.k_max() == k_max && model.n_fit == expected_n) return model;
    } catch (const DataError&) {
      // Stale or damaged cache; refit below.
    }
  }
  PcaOptions pca_options;
  pca_options.subsample_rows = options.pca_subsample;
  pca_options.seed = derive_seed(options.seed, 0x9ca0000 + layer_index);
  auto model = fit_pca<double>(train, k_max, pca_options);
  if (cache) save_pca(model, *cache);
  return model;
}

}  // namespace

SweepReport run_sweep(const Manifest& manifest, const SweepOptions& options) {
  if (options.models.empty()) throw ConfigError("no models requested");
  if (options.k < 1) throw ConfigError("k must be >= 1");
  if (options.pca_kmax_cap < 1) throw ConfigError("pca k_max cap must be >= 1");

  SweepReport report;
  report.seed = options.seed;
  report.reference_accuracy = manifest.network_accuracy;
  if (!options.grid) report.notes.push_back("default grid includes the exact layer size as its final point");

  CellJournal journal = options.journal_path ? CellJournal(*options.journal_path) : CellJournal();
  std::mutex warn_mutex;

  for (std::size_t li = 0; li < manifest.layers.size(); ++li) {
    const ManifestLayer& layer = manifest.layers[li];
    ActivationSet train = read_activation_set(layer.train_path);
    ActivationSet test = read_activation_set(layer.test_path);
    const auto p = static_cast<std::int64_t>(train.n_features());
    if (test.n_features() != train.n_features())
      throw DataError("layer " + layer.layer_id + ": train has " + std::to_string(train.n_features()) +
                      " features, test has " + std::to_string(test.n_features()));
    if (layer.dim != 0 && layer.dim != static_cast<std::uint64_t>(p))
      throw DataError("layer " + layer.layer_id + ": manifest dim " + std::to_string(layer.dim) +
                      " != file dim " + std::to_string(p));
    const int n_classes = static_cast<int>(std::max(train.n_classes, test.n_classes));

    SweepGrid grid = options.grid ? SweepGrid{*options.grid, options.include_full} : default_grid(p);
    grid.include_full = options.include_full;
    validate_grid(grid.dims, p);

    const std::int64_t capacity =
        std::min<std::int64_t>({static_cast<std::int64_t>(train.n_samples()) - 1, p, options.pca_kmax_cap});
    std::vector<int> dims;
    for (int d : grid.dims) {
      if (d <= capacity) dims.push_back(d);
    }
    if (dims.size() < grid.dims.size())
      report.warnings.push_back("layer " + layer.layer_id + ": grid points above PCA capacity " +
                                std::to_string(capacity) + " skipped (" +
                                std::to_string(grid.dims.size() - dims.size()) + " points)");
    if (dims.empty()) throw ConfigError("layer " + layer.layer_id + ": no grid point within PCA capacity");

    // On the raw activations, so the statistic is invariant to rotations of the layer.
    std::optional<double> nc1;
    try {
      nc1 = nc1_ratio(train.data, train.labels);
    } catch (const DataError& e) {
      report.warnings.push_back("layer " + layer.layer_id + ": " + e.what());
    }

    const Standardizer<double> standardizer = fit_standardizer<double>(train.data);
    const RowMatrix<double> x_train = apply_standardizer(standardizer, train.data);
    const RowMatrix<double> x_test = apply_standardizer(standardizer, test.data);
    train.data.resize(0, 0);
    test.data.resize(0, 0);

    const int k_max = dims.back();
    const PcaModel<double> pca = fit_or_load_pca(x_train, k_max, options, li);
    const RowMatrix<double> proj_train = project(pca, x_train, k_max);
    const RowMatrix<double> proj_test = project(pca, x_test, k_max);

    LayerSummary summary;
    summary.layer_id = layer.layer_id;
    summary.tap_point = layer.tap_point;
    summary.dim = static_cast<int>(p);
    summary.n_train = static_cast<int>(train.n_samples());
    summary.n_test = static_cast<int>(test.n_samples());
    summary.n_classes = n_classes;
    summary.k_max = k_max;
    summary.grid = dims;
    for (int d : dims) summary.variance_cumulative.push_back(explained_variance_cumulative(pca, d));
    summary.nc1_ratio = nc1;

    for (int d : dims) {
      try {
        summary.nc1_profile.emplace_back(nc1_ratio(proj_train.leftCols(d), train.labels));
      } catch (const DataError&) {
        summary.nc1_profile.emplace_back(std::nullopt);
      }
    }
    if (test.network_preds) {
      const auto ncc = fit_ncc<double>(x_train, train.labels, n_classes);
      summary.nc4_agreement = nc4_agreement(predict_ncc(ncc, x_test), *test.network_preds);
    }

    std::vector<Cell> cells;
    for (ModelKind model : options.models) {
      for (int d : dims) cells.push_back({model, d});
      if (grid.include_full) cells.push_back({model, 0});
    }
    std::vector<double> accuracy(cells.size(), 0.0);

    parallel_for(cells.size(), options.workers, [&](std::size_t ci) {
      const Cell cell = cells[ci];
      if (auto cached = journal.lookup(layer.layer_id, cell.model, cell.d, options.seed)) {
        accuracy[ci] = *cached;
        return;
      }
      const auto start = std::chrono::steady_clock::now();
      const std::uint64_t cell_seed = derive_seed(options.seed, li * 1'000'003ULL + static_cast<std::uint64_t>(cell.d));
      std::string warning;
      if (cell.d == 0) {
        accuracy[ci] = run_cell(cell.model, x_train, train.labels, x_test, test.labels, n_classes, options,
                                cell_seed, &warning);
      } else {
        accuracy[ci] = run_cell(cell.model, proj_train.leftCols(cell.d), train.labels, proj_test.leftCols(cell.d),
                                test.labels, n_classes, options, cell_seed, &warning);
      }
      const double wall_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      journal.append({layer.layer_id, cell.model, cell.d, accuracy[ci], wall_ms, options.seed});
      if (!warning.empty()) {
        std::lock_guard lock(warn_mutex);
        report.warnings.push_back("layer " + layer.layer_id + " d " +
                                  (cell.d == 0 ? std::string("full") : std::to_string(cell.d)) + ": " + warning);
      }
    });

    for (ModelKind model : options.models) {
      AccuracyCurve curve;
      curve.layer_id = layer.layer_id;
      curve.model = model;
      for (std::size_t ci = 0; ci < cells.size(); ++ci) {
        if (cells[ci].model != model) continue;
        if (cells[ci].d == 0) curve.full_dim_accuracy = accuracy[ci];
        else curve.points.push_back({cells[ci].d, accuracy[ci]});
      }
      report.curves.push_back(std::move(curve));
    }
    report.layers.push_back(std::move(summary));
  }
  // Warnings are appended from worker threads; fix their order.
  std::sort(report.warnings.begin(), report.warnings.end());
  return report;
}

}  // namespace probekit
