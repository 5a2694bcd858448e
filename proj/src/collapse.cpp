#include "probekit/collapse.hpp"

#include <algorithm>
#include <iterator>

namespace probekit {

double nc4_agreement(const Labels& ncc_pred, const Labels& network_pred) {
  if (ncc_pred.size() != network_pred.size())
    throw DataError("nc4_agreement: length mismatch (" + std::to_string(ncc_pred.size()) + " vs " +
                    std::to_string(network_pred.size()) + ")");
  if (ncc_pred.size() == 0) throw DataError("nc4_agreement: empty label vectors");
  return static_cast<double>((ncc_pred.array() == network_pred.array()).count()) /
         static_cast<double>(ncc_pred.size());
}

namespace {

double best_at_small_d(const AccuracyCurve& curve, int d_small) {
  bool any = false;
  double best = 0;
  for (const auto& pt : curve.points) {
    if (pt.d > d_small) continue;
    best = any ? std::max(best, pt.accuracy) : pt.accuracy;
    any = true;
  }
  if (!any)
    throw DataError("layer " + curve.layer_id + " model " + std::string(to_string(curve.model)) +
                    ": no grid point with d <= " + std::to_string(d_small));
  return best;
}

void check_parameters(double reference_accuracy, int d_small, double epsilon) {
  if (!(reference_accuracy > 0 && reference_accuracy <= 1)) throw ConfigError("reference accuracy must be in (0, 1]");
  if (d_small < 1) throw ConfigError("d_small must be >= 1");
  if (!(epsilon >= 0 && epsilon < 1)) throw ConfigError("epsilon must be in [0, 1)");
}

}  // namespace

CollapseReport build_collapse_report(const SweepReport& report, double reference_accuracy, int d_small,
                                     double epsilon) {
  check_parameters(reference_accuracy, d_small, epsilon);
  CollapseReport out;
  out.d_small = d_small;
  out.epsilon = epsilon;
  out.reference_accuracy = reference_accuracy;

  const double target = (1.0 - epsilon) * reference_accuracy;
  bool complete = true;
  for (const auto& layer : report.layers) {
    CollapseLayer row;
    row.layer_id = layer.layer_id;
    row.nc1_ratio = layer.nc1_ratio;
    row.nc4_agreement = layer.nc4_agreement;
    row.meets_reference = true;
    for (ModelKind model : kAllModels) {
      const AccuracyCurve* curve = report.find_curve(layer.layer_id, model);
      if (!curve) {
        complete = false;
        row.meets_reference = false;
        continue;
      }
      const double acc = best_at_small_d(*curve, d_small);
      row.accuracy_at_d_small[model] = acc;
      if (acc < target) row.meets_reference = false;
    }
    out.layers.push_back(std::move(row));
  }
  if (!complete || out.layers.empty()) return out;

  // Walk back from the last layer while the condition keeps holding.
  int first = static_cast<int>(out.layers.size());
  while (first > 0 && out.layers[static_cast<std::size_t>(first - 1)].meets_reference) --first;
  if (first < static_cast<int>(out.layers.size())) out.boundary = CollapseBoundary{first - 1, first};
  return out;
}

std::optional<CollapseBoundary> detect_collapse_layer(const SweepReport& report, double reference_accuracy,
                                                      int d_small, double epsilon) {
  for (const auto& layer : report.layers)
    for (ModelKind model : kAllModels)
      if (!report.find_curve(layer.layer_id, model))
        throw DataError("missing model curves: layer " + layer.layer_id + " has no " +
                        std::string(to_string(model)) + " curve");
  return build_collapse_report(report, reference_accuracy, d_small, epsilon).boundary;
}

std::string CollapseReport::describe_boundary() const {
  for (const auto& l : layers)
    if (l.accuracy_at_d_small.size() != std::size(kAllModels)) return "collapse detection needs knn, ncc and svm curves";
  if (!boundary) return "no collapse detected";
  if (boundary->first < 0) return "collapsed from first tap";
  const auto& before = layers[static_cast<std::size_t>(boundary->first)].layer_id;
  const auto& after = layers[static_cast<std::size_t>(boundary->second)].layer_id;
  return "collapse between " + before + " and " + after;
}

}  // namespace probekit
