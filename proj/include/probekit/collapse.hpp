#pragma once

#include "probekit/sweep.hpp"
#include "probekit/types.hpp"

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace probekit {

/// tr(Sigma_W) / tr(Sigma_B).
///
/// Sigma_W averages the outer products of each row's deviation from its class
/// mean; Sigma_B averages (weighted by class size) the outer products of each
/// class mean's deviation from the global mean. Only the traces are formed,
/// as sums of squared deviations. Classes without rows are ignored.
template <typename Derived>
double nc1_ratio(const Eigen::MatrixBase<Derived>& x, const Labels& y) {
  if (x.rows() != y.size()) throw DataError("nc1_ratio: row/label count mismatch");
  if (x.rows() == 0) throw DataError("nc1_ratio: empty input");
  if (y.minCoeff() < 0) throw DataError("nc1_ratio: negative class label");
  const int c = class_count(y);
  const Eigen::Index p = x.cols();

  Eigen::MatrixXd means = Eigen::MatrixXd::Zero(c, p);
  std::vector<Eigen::Index> counts(static_cast<std::size_t>(c), 0);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    means.row(y[i]) += x.row(i).template cast<double>();
    ++counts[static_cast<std::size_t>(y[i])];
  }
  int present = 0;
  for (int k = 0; k < c; ++k) {
    if (counts[static_cast<std::size_t>(k)] == 0) continue;
    means.row(k) /= static_cast<double>(counts[static_cast<std::size_t>(k)]);
    ++present;
  }
  if (present < 2) throw DataError("nc1_ratio: need at least 2 populated classes");

  const Eigen::RowVectorXd global = x.template cast<double>().colwise().mean();
  double within = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) within += (x.row(i).template cast<double>() - means.row(y[i])).squaredNorm();
  double between = 0;
  for (int k = 0; k < c; ++k)
    if (counts[static_cast<std::size_t>(k)] > 0)
      between += static_cast<double>(counts[static_cast<std::size_t>(k)]) * (means.row(k) - global).squaredNorm();
  const double n = static_cast<double>(x.rows());
  within /= n;
  between /= n;
  if (between <= 1e-14 * (within + between) || between == 0.0)
    throw DataError("nc1_ratio: degenerate between-class scatter (all class means equal)");
  return within / between;
}

/// Fraction of samples where the NCC probe agrees with the network.
double nc4_agreement(const Labels& ncc_pred, const Labels& network_pred);

using CollapseBoundary = std::pair<int, int>;

/// Earliest layer L such that L and every later layer let all three probes
/// reach (1 - epsilon) x reference_accuracy with some grid d <= d_small.
/// Returns (L - 1, L); (-1, 0) means collapsed from the first tap.
std::optional<CollapseBoundary> detect_collapse_layer(const SweepReport& report, double reference_accuracy,
                                                      int d_small = 10, double epsilon = 0.02);

struct CollapseLayer {
  std::string layer_id;
  std::optional<double> nc1_ratio;
  std::optional<double> nc4_agreement;
  /// Best accuracy over grid d <= d_small, per model.
  std::map<ModelKind, double> accuracy_at_d_small;
  bool meets_reference = false;
};

struct CollapseReport {
  std::vector<CollapseLayer> layers;
  std::optional<CollapseBoundary> boundary;
  int d_small = 10;
  double epsilon = 0.02;
  double reference_accuracy = 0;

  [[nodiscard]] std::string describe_boundary() const;
};

CollapseReport build_collapse_report(const SweepReport& report, double reference_accuracy, int d_small = 10,
                                     double epsilon = 0.02);

}  // namespace probekit
