#include "probekit/activation_io.hpp"

#include "binary_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace probekit {
namespace {

using detail::byteswap_if_big;
using detail::get;
using detail::put;

ActivationSetHeader read_header(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof magic)) throw DataError("truncated header");
  if (std::memcmp(magic, kActivationMagic, sizeof magic) != 0) throw DataError("bad magic");

  ActivationSetHeader h;
  std::uint32_t id_len = 0;
  if (!get(in, h.format_version)) throw DataError("truncated header");
  if (h.format_version != kActivationFormatVersion)
    throw DataError("version mismatch: file has " + std::to_string(h.format_version) + ", expected " +
                    std::to_string(kActivationFormatVersion));
  if (!get(in, h.n_samples) || !get(in, h.n_features) || !get(in, h.n_classes) || !get(in, h.flags) ||
      !get(in, id_len))
    throw DataError("truncated header");
  if (id_len > (1u << 16)) throw DataError("layer_id length " + std::to_string(id_len) + " is implausible");
  h.layer_id.resize(id_len);
  if (id_len > 0 && !in.read(h.layer_id.data(), id_len)) throw DataError("truncated header");

  if (h.n_samples == 0 || h.n_features == 0) throw DataError("empty activation matrix");
  if (h.n_classes < 2) throw DataError("n_classes must be >= 2");
  if (h.n_classes > 65536) throw DataError("n_classes exceeds u16 label range");
  return h;
}

void read_labels(std::istream& in, Labels& out, std::uint64_t n, std::uint64_t n_classes, const char* what) {
  std::vector<std::uint16_t> raw(n);
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * sizeof(std::uint16_t))))
    throw DataError("truncated payload");
  out.resize(static_cast<Eigen::Index>(n));
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto v = byteswap_if_big(raw[i]);
    if (v >= n_classes)
      throw DataError(std::string(what) + " " + std::to_string(v) + " at row " + std::to_string(i) +
                      " >= n_classes " + std::to_string(n_classes));
    out[static_cast<Eigen::Index>(i)] = v;
  }
}

void write_labels(std::ostream& out, const Labels& labels) {
  std::vector<std::uint16_t> raw(static_cast<std::size_t>(labels.size()));
  for (Eigen::Index i = 0; i < labels.size(); ++i)
    raw[static_cast<std::size_t>(i)] = byteswap_if_big(static_cast<std::uint16_t>(labels[i]));
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 2));
}

void check_label_vector(const Labels& v, const ActivationSet& set, const char* what) {
  if (static_cast<std::size_t>(v.size()) != set.n_samples())
    throw DataError(std::string(what) + " length " + std::to_string(v.size()) + " != n_samples " +
                    std::to_string(set.n_samples()));
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (v[i] < 0 || static_cast<std::uint64_t>(v[i]) >= set.n_classes)
      throw DataError(std::string(what) + " " + std::to_string(v[i]) + " at row " + std::to_string(i) +
                      " outside [0, n_classes)");
}

}  // namespace

std::uint64_t ActivationSetHeader::payload_size() const {
  const std::uint64_t label_bytes = n_samples * 2 * (has_preds() ? 2 : 1);
  return n_samples * n_features * 4 + label_bytes;
}

void check_invariants(const ActivationSet& set) {
  if (set.n_samples() == 0 || set.n_features() == 0) throw DataError("empty activation matrix");
  if (set.n_classes < 2) throw DataError("n_classes must be >= 2");
  if (set.n_classes > 65536) throw DataError("n_classes exceeds u16 label range");
  if (!set.data.allFinite()) throw DataError("non-finite data");
  check_label_vector(set.labels, set, "label");
  if (set.network_preds) check_label_vector(*set.network_preds, set, "network prediction");
}

void write_activation_set(const ActivationSet& set, const std::filesystem::path& path) {
  check_invariants(set);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");

  std::uint32_t flags = 0;
  if (set.network_preds) flags |= kFlagHasPreds;
  if (set.split == Split::Test) flags |= kFlagTestSplit;

  out.write(kActivationMagic, sizeof kActivationMagic);
  put(out, kActivationFormatVersion);
  put(out, static_cast<std::uint64_t>(set.n_samples()));
  put(out, static_cast<std::uint64_t>(set.n_features()));
  put(out, set.n_classes);
  put(out, flags);
  put(out, static_cast<std::uint32_t>(set.layer_id.size()));
  out.write(set.layer_id.data(), static_cast<std::streamsize>(set.layer_id.size()));

  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(set.data.data()),
              static_cast<std::streamsize>(set.data.size() * sizeof(float)));
  } else {
    for (Eigen::Index i = 0; i < set.data.size(); ++i) put(out, set.data.data()[i]);
  }
  write_labels(out, set.labels);
  if (set.network_preds) write_labels(out, *set.network_preds);
  if (!out.flush()) throw DataError("I/O failure writing '" + path.string() + "'");
}

ActivationSet read_activation_set(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  const ActivationSetHeader h = read_header(in);

  ActivationSet set;
  set.layer_id = h.layer_id;
  set.n_classes = h.n_classes;
  set.split = h.split();
  // Read straight into the matrix storage; no staging copy.
  set.data.resize(static_cast<Eigen::Index>(h.n_samples), static_cast<Eigen::Index>(h.n_features));
  if (!in.read(reinterpret_cast<char*>(set.data.data()),
               static_cast<std::streamsize>(h.n_samples * h.n_features * sizeof(float))))
    throw DataError("truncated payload");
  if constexpr (std::endian::native == std::endian::big) {
    for (Eigen::Index i = 0; i < set.data.size(); ++i) set.data.data()[i] = byteswap_if_big(set.data.data()[i]);
  }
  if (!set.data.allFinite()) throw DataError("non-finite data");
  read_labels(in, set.labels, h.n_samples, h.n_classes, "label");
  if (h.has_preds()) {
    Labels preds;
    read_labels(in, preds, h.n_samples, h.n_classes, "network prediction");
    set.network_preds = std::move(preds);
  }
  return set;
}

ActivationSetHeader validate_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  ActivationSetHeader h = read_header(in);
  const auto size = std::filesystem::file_size(path);
  if (size < h.header_size() + h.payload_size()) throw DataError("truncated payload");
  return h;
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest '" + path.string() + "' is not valid JSON: " + e.what());
  }
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };

  Manifest m;
  try {
    for (const auto& entry : j.at("layers")) {
      ManifestLayer layer;
      layer.layer_id = entry.at("layer_id").get<std::string>();
      layer.train_path = resolve(entry.at("train_path").get<std::string>());
      layer.test_path = resolve(entry.at("test_path").get<std::string>());
      layer.dim = entry.at("dim").get<std::uint64_t>();
      layer.tap_point = entry.value("tap_point", "");
      m.layers.push_back(std::move(layer));
    }
    if (j.contains("network_accuracy") && !j["network_accuracy"].is_null())
      m.network_accuracy = j["network_accuracy"].get<double>();
    if (j.contains("n_classes") && !j["n_classes"].is_null()) m.n_classes = j["n_classes"].get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest '" + path.string() + "': " + e.what());
  }
  if (m.layers.empty()) throw DataError("manifest '" + path.string() + "' lists no layers");
  return m;
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  nlohmann::json j;
  j["layers"] = nlohmann::json::array();
  for (const auto& layer : manifest.layers) {
    j["layers"].push_back({{"layer_id", layer.layer_id},
                           {"train_path", layer.train_path.generic_string()},
                           {"test_path", layer.test_path.generic_string()},
                           {"dim", layer.dim},
                           {"tap_point", layer.tap_point}});
  }
  j["network_accuracy"] = manifest.network_accuracy ? nlohmann::json(*manifest.network_accuracy) : nlohmann::json();
  j["n_classes"] = manifest.n_classes ? nlohmann::json(*manifest.n_classes) : nlohmann::json();
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << '\n';
}

}  // namespace probekit
