#pragma once

#include "probekit/activation_io.hpp"
#include "probekit/pca.hpp"
#include "probekit/probes.hpp"
#include "probekit/types.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

namespace probekit {

struct SweepGrid {
  std::vector<int> dims;  // strictly increasing
  bool include_full = true;
};

/// 1..20, 30, 40, 50, 100, 150, 200, 250, 300, 400, 500, 750, 1000, 1250,
/// 1500, 1750, 2000, then every 1000; truncated at `layer_dim`, which is
/// appended when it is not already a grid point.
SweepGrid default_grid(std::int64_t layer_dim);

/// Throws ConfigError unless dims are positive, strictly increasing and <= layer_dim.
void validate_grid(const std::vector<int>& dims, std::int64_t layer_dim);

struct CurvePoint {
  int d = 0;
  double accuracy = 0;
};

struct AccuracyCurve {
  std::string layer_id;
  ModelKind model = ModelKind::Knn;
  std::vector<CurvePoint> points;  // sorted by d
  std::optional<double> full_dim_accuracy;

  [[nodiscard]] std::optional<double> accuracy_at(int d) const;
};

struct MinPcStat {
  std::string layer_id;
  ModelKind model = ModelKind::Knn;
  double best_accuracy = 0;
  double threshold = 0;
  int d_min = 0;
  double variance_at_d_min = 0;
  /// False when only the unprojected evaluation reached the threshold; d_min
  /// then holds the layer dimension and the variance is 1.
  bool on_grid = true;
};

/// Smallest grid d whose accuracy reaches `fraction` x best accuracy (best
/// includes the unprojected evaluation when present).
MinPcStat min_pcs_for_fraction(const AccuracyCurve& curve, double fraction,
                               const std::function<double(int)>& variance_at, int layer_dim);
MinPcStat min_pcs_for_fraction(const AccuracyCurve& curve, double fraction, const PcaModel<double>& pca);

struct LayerSummary {
  std::string layer_id;
  std::string tap_point;
  int dim = 0;
  int n_train = 0;
  int n_test = 0;
  int n_classes = 0;
  int k_max = 0;
  std::vector<int> grid;
  /// Cumulative explained variance at each grid point.
  std::vector<double> variance_cumulative;
  /// Within/between scatter trace ratio of the raw training rows.
  std::optional<double> nc1_ratio;
  /// Same statistic on the standardized top-d projection, one per grid point.
  std::vector<std::optional<double>> nc1_profile;
  /// NCC (unprojected) vs network prediction agreement on the test split.
  std::optional<double> nc4_agreement;

  [[nodiscard]] double variance_at(int d) const;
};

struct SweepReport {
  std::vector<LayerSummary> layers;
  std::vector<AccuracyCurve> curves;
  std::optional<double> reference_accuracy;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;
  std::vector<std::string> notes;

  [[nodiscard]] const AccuracyCurve* find_curve(const std::string& layer_id, ModelKind model) const;
};

struct SweepOptions {
  std::vector<ModelKind> models{ModelKind::Knn, ModelKind::Ncc, ModelKind::Svm};
  std::optional<std::vector<int>> grid;
  bool include_full = true;
  int k = 10;
  double c_param = 1.0;
  double svm_tol = 1e-4;
  int svm_max_epochs = 10000;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::int64_t pca_kmax_cap = 4096;
  std::optional<std::size_t> pca_subsample;
  std::optional<std::filesystem::path> journal_path;
  std::optional<std::filesystem::path> pca_cache_dir;
};

/// Append-only record of finished (layer, model, d) cells, one JSON object per
/// line: {layer_id, model, d, accuracy, wall_ms, seed}. d == 0 denotes the
/// unprojected evaluation. Safe to append from several threads.
class CellJournal {
 public:
  struct Record {
    std::string layer_id;
    ModelKind model = ModelKind::Knn;
    int d = 0;
    double accuracy = 0;
    double wall_ms = 0;
    std::uint64_t seed = 0;
  };

  CellJournal() = default;
  /// Loads existing records (skipping a torn trailing line) and opens for append.
  explicit CellJournal(std::filesystem::path path);

  [[nodiscard]] std::optional<double> lookup(const std::string& layer_id, ModelKind model, int d,
                                             std::uint64_t seed) const;
  void append(const Record& record);
  [[nodiscard]] std::size_t size() const;

  static std::vector<Record> read_all(const std::filesystem::path& path);

 private:
  using Key = std::tuple<std::string, ModelKind, int, std::uint64_t>;
  std::optional<std::filesystem::path> path_;
  std::map<Key, double> done_;
  mutable std::mutex mutex_;
};

/// Standardize, project and probe every layer of the manifest.
SweepReport run_sweep(const Manifest& manifest, const SweepOptions& options);

}  // namespace probekit
