#include "probekit/pca.hpp"

#include "binary_io.hpp"

#include <cstring>
#include <fstream>

namespace probekit {
namespace {

constexpr char kPcaMagic[8] = {'P', 'R', 'O', 'B', 'E', 'P', 'C', '1'};
constexpr std::uint32_t kPcaFormatVersion = 1;

void put_doubles(std::ostream& out, const double* values, Eigen::Index count) {
  for (Eigen::Index i = 0; i < count; ++i) detail::put(out, values[i]);
}

void get_doubles(std::istream& in, double* values, Eigen::Index count) {
  for (Eigen::Index i = 0; i < count; ++i)
    if (!detail::get(in, values[i])) throw DataError("truncated PCA blob");
}

}  // namespace

void save_pca(const PcaModel<double>& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out.write(kPcaMagic, sizeof kPcaMagic);
  detail::put(out, kPcaFormatVersion);
  detail::put(out, static_cast<std::uint64_t>(model.k_max()));
  detail::put(out, static_cast<std::uint64_t>(model.dim()));
  detail::put(out, model.n_fit);
  put_doubles(out, model.components.data(), model.components.size());
  put_doubles(out, model.singular_values.data(), model.singular_values.size());
  put_doubles(out, model.explained_variance_ratio.data(), model.explained_variance_ratio.size());
  if (!out.flush()) throw DataError("I/O failure writing '" + path.string() + "'");
}

PcaModel<double> load_pca(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  char magic[8];
  if (!in.read(magic, sizeof magic)) throw DataError("truncated PCA blob");
  if (std::memcmp(magic, kPcaMagic, sizeof magic) != 0) throw DataError("bad magic");
  std::uint32_t version = 0;
  std::uint64_t k_max = 0, dim = 0;
  PcaModel<double> model;
  if (!detail::get(in, version)) throw DataError("truncated PCA blob");
  if (version != kPcaFormatVersion) throw DataError("version mismatch");
  if (!detail::get(in, k_max) || !detail::get(in, dim) || !detail::get(in, model.n_fit))
    throw DataError("truncated PCA blob");
  if (k_max == 0 || dim == 0 || k_max > dim) throw DataError("corrupt PCA blob shape");
  model.components.resize(static_cast<Eigen::Index>(k_max), static_cast<Eigen::Index>(dim));
  model.singular_values.resize(static_cast<Eigen::Index>(k_max));
  model.explained_variance_ratio.resize(static_cast<Eigen::Index>(k_max));
  get_doubles(in, model.components.data(), model.components.size());
  get_doubles(in, model.singular_values.data(), model.singular_values.size());
  get_doubles(in, model.explained_variance_ratio.data(), model.explained_variance_ratio.size());
  return model;
}

}  // namespace probekit
