#pragma once

#include "probekit/collapse.hpp"
#include "probekit/sweep.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace probekit {

inline constexpr const char* kVersion = "0.1.0";

struct RunConfig {
  std::filesystem::path manifest;
  std::vector<ModelKind> models{ModelKind::Knn, ModelKind::Ncc, ModelKind::Svm};
  std::optional<std::vector<int>> grid;
  bool include_full = true;
  int k = 10;
  double c_param = 1.0;
  double svm_tol = 1e-4;
  int svm_max_epochs = 10000;
  double fraction = 0.9;
  int d_small = 10;
  double epsilon = 0.02;
  std::size_t workers = 1;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "probekit-out";
  std::int64_t pca_kmax_cap = 4096;
  std::optional<std::size_t> pca_subsample;
  /// Overrides the manifest's network accuracy for collapse detection.
  std::optional<double> reference_accuracy;
  bool strict = false;
};

/// Field-level problems with a config; empty means valid. When
/// `check_files` is set the manifest and every layer file must exist.
std::vector<std::string> check_config(const RunConfig& config, bool check_files = true);

/// Parses a config object, appending diagnostics for missing or mistyped
/// fields. Relative paths resolve against `base_dir`.
RunConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir,
                           std::vector<std::string>& diagnostics);
nlohmann::json config_to_json(const RunConfig& config);

struct ConfigResult {
  std::optional<RunConfig> config;
  std::vector<std::string> diagnostics;

  [[nodiscard]] bool ok() const { return config.has_value() && diagnostics.empty(); }
};

ConfigResult validate_config(const std::filesystem::path& path);

/// Everything written to report.json.
struct FullReport {
  std::string version = kVersion;
  std::string timestamp;
  nlohmann::json config = nlohmann::json::object();
  SweepReport sweep;
  std::vector<MinPcStat> min_pcs;
  std::optional<CollapseReport> collapse;
};

nlohmann::json to_json(const FullReport& report);
FullReport report_from_json(const nlohmann::json& j);
FullReport read_report(const std::filesystem::path& path);
void write_report(const FullReport& report, const std::filesystem::path& path);

/// MinPcStat for every curve in the sweep, using the stored variance table.
std::vector<MinPcStat> compute_min_pcs(const SweepReport& sweep, double fraction);

/// Formats a number exactly as it appears in report.json.
std::string format_number(double value);

void write_curves_csv(const FullReport& report, const std::filesystem::path& path);
void write_min_pcs_csv(const FullReport& report, const std::filesystem::path& path);
void write_collapse_csv(const CollapseReport& collapse, const std::filesystem::path& path);

/// Figure-ready tables: accuracy vs d, d_min vs layer and variance vs layer.
std::vector<std::filesystem::path> emit_plot_data(const FullReport& report, const std::filesystem::path& dir);

/// Runs the sweep and writes report.json, curves.csv, min_pcs.csv and
/// collapse.csv into the output directory. Returns the process exit status.
int run_pipeline(const RunConfig& config, std::ostream& log);

/// Builds the report in memory without touching the output directory's CSVs.
FullReport build_report(const RunConfig& config, const SweepReport& sweep);

}  // namespace probekit
