#pragma once

#include "probekit/activation_io.hpp"
#include "probekit/types.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace probekit {

/// Per-feature affine standardization learned on training rows.
///
/// Uses the population standard deviation (divide by n). Columns whose
/// deviation falls below `epsilon` keep their index and are divided by
/// `epsilon` instead.
template <typename Scalar>
struct Standardizer {
  Vector<Scalar> mean;
  Vector<Scalar> std;
  Scalar epsilon = Scalar(1e-8);

  [[nodiscard]] Eigen::Index dim() const { return mean.size(); }
};

template <typename Scalar = double, typename Derived>
Standardizer<Scalar> fit_standardizer(const Eigen::MatrixBase<Derived>& data, Scalar epsilon = Scalar(1e-8)) {
  const Eigen::Index n = data.rows();
  if (n < 2) throw DataError("fit_standardizer needs at least 2 samples, got " + std::to_string(n));
  if (!(epsilon > Scalar(0))) throw ConfigError("standardizer epsilon must be positive");

  Standardizer<Scalar> s;
  s.epsilon = epsilon;
  s.mean = data.template cast<Scalar>().colwise().sum().transpose() / Scalar(n);
  s.std.resize(data.cols());
  // Second pass over centered values; avoids the E[x^2] - E[x]^2 cancellation.
  for (Eigen::Index j = 0; j < data.cols(); ++j) {
    const Scalar var = (data.col(j).template cast<Scalar>().array() - s.mean[j]).square().sum() / Scalar(n);
    s.std[j] = std::max(std::sqrt(var), epsilon);
  }
  return s;
}

template <typename Scalar = double>
Standardizer<Scalar> fit_standardizer(const ActivationSet& train, Scalar epsilon = Scalar(1e-8)) {
  return fit_standardizer<Scalar>(train.data, epsilon);
}

template <typename Scalar, typename Derived>
RowMatrix<Scalar> apply_standardizer(const Standardizer<Scalar>& s, const Eigen::MatrixBase<Derived>& data) {
  if (data.cols() != s.dim())
    throw DataError("standardizer expects " + std::to_string(s.dim()) + " features, got " +
                    std::to_string(data.cols()));
  RowMatrix<Scalar> out = data.template cast<Scalar>();
  out.rowwise() -= s.mean.transpose();
  out.array().rowwise() /= s.std.transpose().array();
  return out;
}

template <typename Scalar>
RowMatrix<Scalar> apply_standardizer(const Standardizer<Scalar>& s, const ActivationSet& set) {
  return apply_standardizer(s, set.data);
}

}  // namespace probekit
