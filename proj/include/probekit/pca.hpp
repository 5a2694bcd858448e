#pragma once

#include "probekit/types.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace probekit {

/// Principal axes of a (centered) training matrix.
///
/// `components` holds one unit-norm direction per row, ordered by
/// decreasing singular value. Each row is sign-normalized so that its entry
/// of largest magnitude is positive (first such entry on ties).
/// `explained_variance_ratio[i]` is sigma_i^2 over the squared Frobenius norm
/// of the fitted matrix, i.e. over the sum of *all* squared singular values,
/// so truncated models still report fractions of the total variance.
template <typename Scalar>
struct PcaModel {
  RowMatrix<Scalar> components;
  Vector<Scalar> singular_values;
  Vector<Scalar> explained_variance_ratio;
  std::uint64_t n_fit = 0;

  [[nodiscard]] Eigen::Index k_max() const { return components.rows(); }
  [[nodiscard]] Eigen::Index dim() const { return components.cols(); }
};

struct PcaOptions {
  /// Fit on this many uniformly sampled rows instead of all of them.
  std::optional<std::size_t> subsample_rows;
  std::uint64_t seed = 0;
};

namespace detail {

template <typename Scalar>
void normalize_signs(RowMatrix<Scalar>& components) {
  for (Eigen::Index r = 0; r < components.rows(); ++r) {
    Eigen::Index arg = 0;
    components.row(r).cwiseAbs().maxCoeff(&arg);
    if (components(r, arg) < Scalar(0)) components.row(r) *= Scalar(-1);
  }
}

/// Replaces rows flagged in `needs_fill` by unit vectors orthogonal to every
/// other row (Gram-Schmidt over the standard basis, in index order).
template <typename Scalar>
void complete_orthonormal(RowMatrix<Scalar>& rows, const std::vector<bool>& needs_fill) {
  const Eigen::Index p = rows.cols();
  Eigen::Index next_basis = 0;
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    if (!needs_fill[static_cast<std::size_t>(r)]) continue;
    for (; next_basis < p; ++next_basis) {
      Vector<Scalar> v = Vector<Scalar>::Unit(p, next_basis);
      for (int pass = 0; pass < 2; ++pass) {
        for (Eigen::Index o = 0; o < rows.rows(); ++o) {
          if (o == r || (needs_fill[static_cast<std::size_t>(o)] && o > r)) continue;
          v -= rows.row(o).dot(v) * rows.row(o).transpose();
        }
      }
      const Scalar norm = v.norm();
      if (norm > Scalar(1e-6)) {
        rows.row(r) = (v / norm).transpose();
        ++next_basis;
        break;
      }
    }
  }
}

template <typename Scalar>
PcaModel<Scalar> fit_pca_rows(const Eigen::Ref<const RowMatrix<Scalar>>& x, Eigen::Index k_max) {
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();
  if (k_max < 1 || k_max > std::min(n, p))
    throw ConfigError("fit_pca: k_max " + std::to_string(k_max) + " out of range [1, " +
                      std::to_string(std::min(n, p)) + "]");

  PcaModel<Scalar> model;
  model.n_fit = static_cast<std::uint64_t>(n);
  model.components.resize(k_max, p);
  model.singular_values.resize(k_max);

  const Scalar total = x.squaredNorm();
  std::vector<bool> needs_fill(static_cast<std::size_t>(k_max), false);

  if (p <= n) {
    Eigen::BDCSVD<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>> svd(x, Eigen::ComputeThinV);
    model.components = svd.matrixV().leftCols(k_max).transpose();
    model.singular_values = svd.singularValues().head(k_max);
  } else {
    // Gram route: X X^T = U S^2 U^T, V = X^T U S^-1.
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> gram(n, n);
    gram.setZero();
    gram.template selfadjointView<Eigen::Lower>().rankUpdate(x);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>> eig(
        gram.template selfadjointView<Eigen::Lower>());
    if (eig.info() != Eigen::Success) throw DataError("fit_pca: Gram eigendecomposition failed");
    // Eigenvalue roundoff is ~eps * lambda_max; anything below that is rank deficiency.
    const Scalar cutoff = std::max(eig.eigenvalues()(n - 1), Scalar(0)) * Scalar(100 * n) *
                          std::numeric_limits<Scalar>::epsilon();
    for (Eigen::Index i = 0; i < k_max; ++i) {
      const Eigen::Index src = n - 1 - i;
      const Scalar lambda = eig.eigenvalues()(src);
      const Scalar sigma = std::sqrt(std::max(lambda, Scalar(0)));
      if (sigma == Scalar(0) || lambda <= cutoff) {
        // Null direction: any unit vector orthogonal to the rest will do.
        needs_fill[static_cast<std::size_t>(i)] = true;
        model.singular_values(i) = Scalar(0);
        model.components.row(i).setZero();
      } else {
        model.singular_values(i) = sigma;
        model.components.row(i) = (x.transpose() * eig.eigenvectors().col(src)).transpose() / sigma;
      }
    }
  }

  if (std::any_of(needs_fill.begin(), needs_fill.end(), [](bool b) { return b; }))
    complete_orthonormal(model.components, needs_fill);
  normalize_signs(model.components);

  model.explained_variance_ratio =
      total > Scalar(0) ? Vector<Scalar>(model.singular_values.array().square() / total)
                        : Vector<Scalar>::Zero(k_max);
  return model;
}

}  // namespace detail

/// Fits the top `k_max` principal components of `data`, which the caller is
/// expected to have centered (standardized).
///
/// When p <= n the right singular vectors come from a thin SVD of the data.
/// When p > n they are recovered from the n x n Gram matrix, which bounds the
/// cost by min(n, p)^3 without forming a p x p covariance.
template <typename Scalar = double, typename Derived>
PcaModel<Scalar> fit_pca(const Eigen::MatrixBase<Derived>& data, Eigen::Index k_max, const PcaOptions& options = {}) {
  if (!data.allFinite()) throw DataError("fit_pca: non-finite input");
  if (options.subsample_rows && *options.subsample_rows < static_cast<std::size_t>(data.rows())) {
    if (*options.subsample_rows < 2) throw ConfigError("fit_pca: subsample must keep at least 2 rows");
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(data.rows()));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    std::mt19937_64 rng(options.seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(*options.subsample_rows);
    std::sort(idx.begin(), idx.end());
    RowMatrix<Scalar> sampled(static_cast<Eigen::Index>(idx.size()), data.cols());
    for (std::size_t i = 0; i < idx.size(); ++i)
      sampled.row(static_cast<Eigen::Index>(i)) = data.row(idx[i]).template cast<Scalar>();
    return detail::fit_pca_rows<Scalar>(sampled, k_max);
  }
  return detail::fit_pca_rows<Scalar>(data.template cast<Scalar>(), k_max);
}

/// Scores of `data` on the first `d` components (n x d).
template <typename Scalar, typename Derived>
RowMatrix<Scalar> project(const PcaModel<Scalar>& model, const Eigen::MatrixBase<Derived>& data, Eigen::Index d) {
  if (d < 1 || d > model.k_max())
    throw ConfigError("project: d " + std::to_string(d) + " out of range [1, " + std::to_string(model.k_max()) +
                      "]");
  if (data.cols() != model.dim())
    throw DataError("project: expected " + std::to_string(model.dim()) + " columns, got " +
                    std::to_string(data.cols()));
  return data.template cast<Scalar>() * model.components.topRows(d).transpose();
}

/// Fraction of total variance captured by the first `d` components.
template <typename Scalar>
Scalar explained_variance_cumulative(const PcaModel<Scalar>& model, Eigen::Index d) {
  if (d < 1 || d > model.k_max())
    throw ConfigError("explained_variance_cumulative: d " + std::to_string(d) + " out of range [1, " +
                      std::to_string(model.k_max()) + "]");
  return model.explained_variance_ratio.head(d).sum();
}

// Versioned binary blob ("PROBEPC1", little-endian, f64 payload) for resuming sweeps.
void save_pca(const PcaModel<double>& model, const std::filesystem::path& path);
PcaModel<double> load_pca(const std::filesystem::path& path);

}  // namespace probekit
