#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace probekit {

/// Dense row-major matrix; one row per sample.
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Labels = Eigen::VectorXi;

/// Base class for all library errors. `ConfigError` maps to CLI exit code 2,
/// everything else to exit code 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

enum class ModelKind { Knn, Ncc, Svm };

inline constexpr ModelKind kAllModels[] = {ModelKind::Knn, ModelKind::Ncc, ModelKind::Svm};

inline std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::Knn: return "knn";
    case ModelKind::Ncc: return "ncc";
    case ModelKind::Svm: return "svm";
  }
  return "?";
}

inline ModelKind parse_model_kind(std::string_view name) {
  if (name == "knn") return ModelKind::Knn;
  if (name == "ncc") return ModelKind::Ncc;
  if (name == "svm") return ModelKind::Svm;
  throw ConfigError("unknown model '" + std::string(name) + "' (expected knn, ncc or svm)");
}

/// Independent stream seed from a base seed (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Number of distinct classes implied by a label vector (max + 1).
inline int class_count(const Labels& y) { return y.size() == 0 ? 0 : y.maxCoeff() + 1; }

}  // namespace probekit
