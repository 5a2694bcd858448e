#pragma once

// PROBEAK1 container: one layer's activations for one split.
//
// Layout (all integers little-endian):
//   magic          8 bytes  "PROBEAK1"
//   format_version u32      1
//   n_samples      u64
//   n_features     u64
//   n_classes      u64
//   flags          u32      bit 0: network predictions present
//                           bit 1: split is "test" (clear means "train")
//   layer_id       u32 byte length, then UTF-8 bytes
//   data           n_samples * n_features f32, row-major
//   labels         n_samples u16
//   network_preds  n_samples u16 (only when flag bit 0 is set)

#include "probekit/types.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace probekit {

enum class Split { Train, Test };

using FeatureMatrix = RowMatrix<float>;

struct ActivationSet {
  std::string layer_id;
  FeatureMatrix data;
  Labels labels;
  std::optional<Labels> network_preds;
  std::uint64_t n_classes = 0;
  Split split = Split::Train;

  [[nodiscard]] std::size_t n_samples() const { return static_cast<std::size_t>(data.rows()); }
  [[nodiscard]] std::size_t n_features() const { return static_cast<std::size_t>(data.cols()); }
};

inline constexpr char kActivationMagic[8] = {'P', 'R', 'O', 'B', 'E', 'A', 'K', '1'};
inline constexpr std::uint32_t kActivationFormatVersion = 1;
inline constexpr std::uint32_t kFlagHasPreds = 1u << 0;
inline constexpr std::uint32_t kFlagTestSplit = 1u << 1;

struct ActivationSetHeader {
  std::uint32_t format_version = kActivationFormatVersion;
  std::uint64_t n_samples = 0;
  std::uint64_t n_features = 0;
  std::uint64_t n_classes = 0;
  std::uint32_t flags = 0;
  std::string layer_id;

  [[nodiscard]] bool has_preds() const { return (flags & kFlagHasPreds) != 0; }
  [[nodiscard]] Split split() const { return (flags & kFlagTestSplit) ? Split::Test : Split::Train; }
  /// Byte offset of the first matrix entry.
  [[nodiscard]] std::uint64_t header_size() const { return header_size_for(layer_id.size()); }
  /// Bytes following the header.
  [[nodiscard]] std::uint64_t payload_size() const;

  static constexpr std::uint64_t header_size_for(std::size_t layer_id_bytes) {
    return 8 + 4 + 8 + 8 + 8 + 4 + 4 + layer_id_bytes;
  }
};

/// Throws DataError describing the first violated invariant.
void check_invariants(const ActivationSet& set);

void write_activation_set(const ActivationSet& set, const std::filesystem::path& path);
ActivationSet read_activation_set(const std::filesystem::path& path);
/// Reads and checks the header only; also verifies the file is long enough
/// for the payload the header promises.
ActivationSetHeader validate_header(const std::filesystem::path& path);

/// One entry per tap, in network order.
struct ManifestLayer {
  std::string layer_id;
  std::filesystem::path train_path;
  std::filesystem::path test_path;
  std::uint64_t dim = 0;
  std::string tap_point;
};

struct Manifest {
  std::vector<ManifestLayer> layers;
  std::optional<double> network_accuracy;
  std::optional<std::uint64_t> n_classes;
};

/// Relative layer paths are resolved against the manifest's directory.
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);

}  // namespace probekit
