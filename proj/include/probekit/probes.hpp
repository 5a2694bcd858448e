#pragma once

// Surrogate classifiers trained on (projected) activations: exact k-nearest
// neighbours, nearest class centre, and a one-vs-rest soft-margin linear SVM.
// All distances are Euclidean. Every argmin/argmax breaks ties toward the
// lower class index.

#include "probekit/parallel.hpp"
#include "probekit/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace probekit {

namespace detail {

// Plain left-to-right accumulation so that distances built from exactly
// representable coordinates tie exactly.
template <typename Scalar>
Scalar squared_distance(const Scalar* a, const Scalar* b, Eigen::Index d) {
  Scalar acc = 0;
  for (Eigen::Index j = 0; j < d; ++j) {
    const Scalar diff = a[j] - b[j];
    acc += diff * diff;
  }
  return acc;
}

inline int resolve_class_count(const Labels& y, int n_classes) {
  if (y.size() > 0 && y.minCoeff() < 0) throw DataError("negative class label");
  const int seen = class_count(y);
  if (n_classes < 0) return seen;
  if (seen > n_classes)
    throw DataError("label " + std::to_string(seen - 1) + " >= n_classes " + std::to_string(n_classes));
  return n_classes;
}

template <typename Derived>
void check_width(const Eigen::MatrixBase<Derived>& q, Eigen::Index d, const char* who) {
  if (q.cols() != d)
    throw DataError(std::string(who) + ": query width " + std::to_string(q.cols()) + " != model width " +
                    std::to_string(d));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// k-NN

template <typename Scalar>
struct KnnModel {
  int k = 10;
  int n_classes = 0;
  RowMatrix<Scalar> train_points;
  Labels train_labels;
};

template <typename Scalar = double, typename Derived>
KnnModel<Scalar> fit_knn(const Eigen::MatrixBase<Derived>& x, const Labels& y, int k = 10, int n_classes = -1) {
  if (x.rows() != y.size()) throw DataError("fit_knn: row/label count mismatch");
  if (k < 1) throw ConfigError("k must be >= 1");
  if (k > x.rows())
    throw ConfigError("fit_knn: k " + std::to_string(k) + " exceeds training size " + std::to_string(x.rows()));
  KnnModel<Scalar> m;
  m.k = k;
  m.n_classes = detail::resolve_class_count(y, n_classes);
  m.train_points = x.template cast<Scalar>();
  m.train_labels = y;
  return m;
}

/// Majority vote over the k nearest training rows. Neighbours at equal
/// distance are ranked by training-row index; vote ties go to the lower class.
///
/// Candidates are screened with a blocked |q|^2 + |x|^2 - 2 q.x product and
/// then re-ranked with exact differences, so the answer matches an exhaustive
/// sort of direct distances.
template <typename Scalar, typename Derived>
Labels predict_knn(const KnnModel<Scalar>& m, const Eigen::MatrixBase<Derived>& queries) {
  const auto& train = m.train_points;
  const Eigen::Index n = train.rows();
  const Eigen::Index d = train.cols();
  detail::check_width(queries, d, "predict_knn");
  const RowMatrix<Scalar> q = queries.template cast<Scalar>();

  const Vector<Scalar> train_sq = train.rowwise().squaredNorm();
  const Scalar max_train_sq = n > 0 ? train_sq.maxCoeff() : Scalar(0);
  const Eigen::Index block = std::clamp<Eigen::Index>((Eigen::Index{1} << 21) / std::max<Eigen::Index>(n, 1), 1, 256);
  const Scalar eps = std::numeric_limits<Scalar>::epsilon();

  Labels out(q.rows());
  std::vector<Scalar> approx(static_cast<std::size_t>(n));
  std::vector<Scalar> scratch(static_cast<std::size_t>(n));
  std::vector<std::pair<Scalar, Eigen::Index>> candidates;
  std::vector<int> votes(static_cast<std::size_t>(m.n_classes));

  for (Eigen::Index b0 = 0; b0 < q.rows(); b0 += block) {
    const Eigen::Index rows = std::min(block, q.rows() - b0);
    const RowMatrix<Scalar> cross = q.middleRows(b0, rows) * train.transpose();
    for (Eigen::Index r = 0; r < rows; ++r) {
      const Eigen::Index qi = b0 + r;
      const Scalar q_sq = q.row(qi).squaredNorm();
      for (Eigen::Index j = 0; j < n; ++j) approx[j] = q_sq + train_sq[j] - Scalar(2) * cross(r, j);
      std::copy(approx.begin(), approx.end(), scratch.begin());
      std::nth_element(scratch.begin(), scratch.begin() + (m.k - 1), scratch.end());
      const Scalar kth = scratch[static_cast<std::size_t>(m.k - 1)];
      const Scalar slack = Scalar(8) * Scalar(d + 4) * eps * (q_sq + max_train_sq);

      candidates.clear();
      for (Eigen::Index j = 0; j < n; ++j) {
        if (approx[j] <= kth + slack)
          candidates.emplace_back(detail::squared_distance(q.row(qi).data(), train.row(j).data(), d), j);
      }
      std::partial_sort(candidates.begin(), candidates.begin() + m.k, candidates.end());

      std::fill(votes.begin(), votes.end(), 0);
      for (int t = 0; t < m.k; ++t) ++votes[static_cast<std::size_t>(m.train_labels[candidates[t].second])];
      out[qi] = static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Nearest class centre

template <typename Scalar>
struct NccModel {
  RowMatrix<Scalar> centroids;  // one row per class
  std::vector<int> class_ids;

  [[nodiscard]] int n_classes() const { return static_cast<int>(centroids.rows()); }
};

template <typename Scalar = double, typename Derived>
NccModel<Scalar> fit_ncc(const Eigen::MatrixBase<Derived>& x, const Labels& y, int n_classes = -1) {
  if (x.rows() != y.size()) throw DataError("fit_ncc: row/label count mismatch");
  const int c = detail::resolve_class_count(y, n_classes);
  NccModel<Scalar> m;
  m.centroids = RowMatrix<Scalar>::Zero(c, x.cols());
  std::vector<std::size_t> counts(static_cast<std::size_t>(c), 0);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    m.centroids.row(y[i]) += x.row(i).template cast<Scalar>();
    ++counts[static_cast<std::size_t>(y[i])];
  }
  for (int k = 0; k < c; ++k) {
    if (counts[static_cast<std::size_t>(k)] == 0)
      throw DataError("fit_ncc: class " + std::to_string(k) + " has no training rows (empty class)");
    m.centroids.row(k) /= Scalar(counts[static_cast<std::size_t>(k)]);
    m.class_ids.push_back(k);
  }
  return m;
}

template <typename Scalar, typename Derived>
Labels predict_ncc(const NccModel<Scalar>& m, const Eigen::MatrixBase<Derived>& queries) {
  const Eigen::Index d = m.centroids.cols();
  detail::check_width(queries, d, "predict_ncc");
  const RowMatrix<Scalar> q = queries.template cast<Scalar>();
  Labels out(q.rows());
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    Scalar best = std::numeric_limits<Scalar>::infinity();
    int arg = 0;
    for (int c = 0; c < m.n_classes(); ++c) {
      const Scalar dist = detail::squared_distance(q.row(i).data(), m.centroids.row(c).data(), d);
      if (dist < best) {
        best = dist;
        arg = c;
      }
    }
    out[i] = m.class_ids[static_cast<std::size_t>(arg)];
  }
  return out;
}

// ---------------------------------------------------------------------------
// One-vs-rest linear SVM

struct SvmOptions {
  double c_param = 1.0;
  /// Relative duality-gap target, (P - D) / P.
  double tol = 1e-4;
  int max_epochs = 10000;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  bool record_trace = false;
};

/// Convergence record for one binary subproblem.
struct BinaryFitInfo {
  double primal_objective = 0;
  double dual_objective = 0;
  double duality_gap = 0;
  int epochs = 0;
  bool converged = false;
  /// Minimization-form dual objective after each epoch (if recorded).
  std::vector<double> dual_trace;
};

template <typename Scalar>
struct LinearSvmModel {
  RowMatrix<Scalar> weights;  // C x d
  Vector<Scalar> biases;
  double c_param = 1.0;
  Vector<Scalar> objective;  // primal objective per class
  std::vector<BinaryFitInfo> fit_info;

  [[nodiscard]] int n_classes() const { return static_cast<int>(weights.rows()); }
  [[nodiscard]] bool converged() const {
    return std::all_of(fit_info.begin(), fit_info.end(), [](const BinaryFitInfo& f) { return f.converged; });
  }
};

/// Primal objective of one binary problem with the bias treated as the weight
/// of a constant unit feature:
///   0.5 (|w|^2 + b^2) + C sum_i max(0, 1 - s_i (w.x_i + b)).
template <typename Scalar, typename Derived>
double svm_primal_objective(const Eigen::MatrixBase<Derived>& x, const Vector<Scalar>& signs,
                            const Vector<Scalar>& w, Scalar b, double c_param) {
  const Vector<Scalar> margins = (x * w).array() + b;
  double hinge = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    hinge += std::max(0.0, 1.0 - static_cast<double>(signs[i] * margins[i]));
  return 0.5 * static_cast<double>(w.squaredNorm() + b * b) + c_param * hinge;
}

namespace detail {

/// Dual coordinate descent on the box-constrained dual
///   min_a 0.5 a'Qa - sum(a),  0 <= a_i <= C,  Q_ij = s_i s_j (x_i.x_j + 1),
/// visiting coordinates in a freshly shuffled order each epoch. Coordinates
/// stuck at a bound are shrunk out of the active set; the full set is
/// restored before convergence is accepted. Stops when the relative duality
/// gap over all rows drops to `tol`.
template <typename Scalar>
BinaryFitInfo solve_binary_svm(const RowMatrix<Scalar>& x, const Vector<Scalar>& signs, const SvmOptions& opt,
                               std::uint64_t seed, Vector<Scalar>& w, Scalar& b) {
  constexpr Scalar kInf = std::numeric_limits<Scalar>::infinity();
  constexpr int kCheckEvery = 50;
  const Eigen::Index n = x.rows();
  const Scalar c = static_cast<Scalar>(opt.c_param);
  const Vector<Scalar> q_diag = x.rowwise().squaredNorm().array() + Scalar(1);
  Vector<Scalar> alpha = Vector<Scalar>::Zero(n);
  w = Vector<Scalar>::Zero(x.cols());
  b = 0;

  std::vector<Eigen::Index> active(static_cast<std::size_t>(n));
  std::iota(active.begin(), active.end(), Eigen::Index{0});
  std::mt19937_64 rng(seed);
  Scalar pg_max_old = kInf;
  Scalar pg_min_old = -kInf;
  Scalar pg_eps = 1;

  BinaryFitInfo info;
  auto check_gap = [&]() {
    info.primal_objective = svm_primal_objective<Scalar>(x, signs, w, b, opt.c_param);
    info.duality_gap = info.primal_objective - info.dual_objective;
    return info.duality_gap <= opt.tol * std::max(std::abs(info.primal_objective), 1e-300);
  };

  for (int epoch = 1; epoch <= opt.max_epochs; ++epoch) {
    std::shuffle(active.begin(), active.end(), rng);
    Scalar pg_max = -kInf;
    Scalar pg_min = kInf;
    std::size_t kept = 0;
    for (std::size_t s = 0; s < active.size(); ++s) {
      const Eigen::Index i = active[s];
      const Scalar grad = signs[i] * (x.row(i).dot(w) + b) - Scalar(1);
      Scalar projected = grad;
      if (alpha[i] <= Scalar(0)) {
        if (grad > pg_max_old) continue;  // shrink
        projected = std::min(grad, Scalar(0));
      } else if (alpha[i] >= c) {
        if (grad < pg_min_old) continue;  // shrink
        projected = std::max(grad, Scalar(0));
      }
      active[kept++] = i;
      pg_max = std::max(pg_max, projected);
      pg_min = std::min(pg_min, projected);
      if (projected == Scalar(0)) continue;
      const Scalar updated = std::clamp(alpha[i] - grad / q_diag[i], Scalar(0), c);
      const Scalar delta = (updated - alpha[i]) * signs[i];
      alpha[i] = updated;
      w.noalias() += delta * x.row(i).transpose();
      b += delta;
    }
    active.resize(kept);

    info.epochs = epoch;
    info.dual_objective = static_cast<double>(alpha.sum()) - 0.5 * static_cast<double>(w.squaredNorm() + b * b);
    if (opt.record_trace) info.dual_trace.push_back(-info.dual_objective);

    const bool full = active.size() == static_cast<std::size_t>(n);
    const bool settled = active.empty() || pg_max - pg_min <= pg_eps;
    if (settled || epoch % kCheckEvery == 0 || epoch == opt.max_epochs) {
      if (check_gap()) {
        info.converged = true;
        break;
      }
      if (settled) {
        if (full) pg_eps /= 10;
        active.resize(static_cast<std::size_t>(n));
        std::iota(active.begin(), active.end(), Eigen::Index{0});
        pg_max_old = kInf;
        pg_min_old = -kInf;
        continue;
      }
    }
    pg_max_old = pg_max > 0 ? pg_max : kInf;
    pg_min_old = pg_min < 0 ? pg_min : -kInf;
  }
  if (!info.converged) check_gap();
  return info;
}

}  // namespace detail

/// One-vs-rest training: class c's subproblem labels rows of class c as +1
/// and all others as -1. Non-convergence is reported through `fit_info`
/// rather than thrown; callers decide whether to escalate.
template <typename Scalar = double, typename Derived>
LinearSvmModel<Scalar> fit_linear_svm(const Eigen::MatrixBase<Derived>& x_in, const Labels& y,
                                      const SvmOptions& opt = {}, int n_classes = -1) {
  if (x_in.rows() != y.size()) throw DataError("fit_linear_svm: row/label count mismatch");
  if (!x_in.allFinite()) throw DataError("fit_linear_svm: non-finite input");
  if (!(opt.c_param > 0)) throw ConfigError("c_param must be > 0");
  if (!(opt.tol > 0)) throw ConfigError("svm tol must be > 0");
  if (opt.max_epochs < 1) throw ConfigError("svm max_epochs must be >= 1");
  const int c = detail::resolve_class_count(y, n_classes);
  if (c < 2) throw DataError("fit_linear_svm: need at least 2 classes");

  const RowMatrix<Scalar> x = x_in.template cast<Scalar>();
  std::vector<Vector<Scalar>> signs(static_cast<std::size_t>(c));
  for (int k = 0; k < c; ++k) {
    Vector<Scalar>& s = signs[static_cast<std::size_t>(k)];
    s = (y.array() == k).select(Vector<Scalar>::Ones(y.size()), Vector<Scalar>::Constant(y.size(), Scalar(-1)));
    const auto positives = (y.array() == k).count();
    if (positives == 0 || positives == y.size())
      throw DataError("degenerate binary problem: class " + std::to_string(k) + " has " +
                      std::to_string(positives) + " of " + std::to_string(y.size()) + " rows");
  }

  LinearSvmModel<Scalar> m;
  m.c_param = opt.c_param;
  m.weights.resize(c, x.cols());
  m.biases.resize(c);
  m.objective.resize(c);
  m.fit_info.resize(static_cast<std::size_t>(c));
  parallel_for(static_cast<std::size_t>(c), opt.workers, [&](std::size_t k) {
    Vector<Scalar> w;
    Scalar b = 0;
    m.fit_info[k] = detail::solve_binary_svm(x, signs[k], opt, derive_seed(opt.seed, k), w, b);
    const auto row = static_cast<Eigen::Index>(k);
    m.weights.row(row) = w.transpose();
    m.biases[row] = b;
    m.objective[row] = static_cast<Scalar>(m.fit_info[k].primal_objective);
  });
  return m;
}

template <typename Scalar, typename Derived>
Labels predict_svm(const LinearSvmModel<Scalar>& m, const Eigen::MatrixBase<Derived>& queries) {
  detail::check_width(queries, m.weights.cols(), "predict_svm");
  const RowMatrix<Scalar> scores =
      (queries.template cast<Scalar>() * m.weights.transpose()).rowwise() + m.biases.transpose();
  Labels out(scores.rows());
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    int arg = 0;
    for (int c = 1; c < m.n_classes(); ++c)
      if (scores(i, c) > scores(i, arg)) arg = c;
    out[i] = arg;
  }
  return out;
}

// ---------------------------------------------------------------------------

/// Fraction of positions where `predicted` equals `truth`.
inline double evaluate_accuracy(const Labels& predicted, const Labels& truth) {
  if (predicted.size() != truth.size())
    throw DataError("evaluate_accuracy: length mismatch (" + std::to_string(predicted.size()) + " vs " +
                    std::to_string(truth.size()) + ")");
  if (truth.size() == 0) throw DataError("evaluate_accuracy: empty label vectors");
  return static_cast<double>((predicted.array() == truth.array()).count()) / static_cast<double>(truth.size());
}

}  // namespace probekit
