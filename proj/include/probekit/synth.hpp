#pragma once

// Seeded synthetic layer families with a planted collapse point, written in
// the same PROBEAK1 + manifest layout as real extracted activations.

#include "probekit/activation_io.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace probekit {

struct LayerFamilySpec {
  int n_layers = 9;
  int n_train = 2000;
  int n_test = 1000;
  int n_classes = 10;
  std::vector<int> dims;            // per layer
  int signal_dim = 9;               // dimension of the class-mean subspace
  std::vector<double> within_std;   // per layer, within-class std inside the signal subspace
  double noise_dims_std = 0.0;      // std in the orthogonal complement
  std::optional<int> collapse_at;   // layers >= this get within std 1e-3 * separation
  double separation = 1.0;          // pairwise distance between class means
  std::uint64_t seed = 0;
};

/// Nine layers, ten classes, collapse planted at layer 5, dims shrinking
/// from 128 to 64. Small enough to sweep in well under a minute.
LayerFamilySpec collapse_demo_spec(std::uint64_t seed = 0);

/// Throws ConfigError on the first violated constraint.
void validate_spec(const LayerFamilySpec& spec);

LayerFamilySpec layer_family_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const LayerFamilySpec& spec);

struct LayerSplits {
  ActivationSet train;
  ActivationSet test;
};

/// Class means sit on a regular simplex (pairwise distance `separation`)
/// inside a signal_dim subspace, embedded in each layer by a seeded random
/// orthonormal map. Samples add isotropic within-class noise in the signal
/// subspace and ambient noise in its complement. Network predictions for
/// every layer come from the NCC rule on the final layer.
std::vector<LayerSplits> generate_layer_family(const LayerFamilySpec& spec);

/// Writes layerNN_{train,test}.pak files and manifest.json into `dir`.
Manifest write_layer_family(const LayerFamilySpec& spec, const std::filesystem::path& dir);

/// Isotropic Gaussian blobs around seeded centres with pairwise distance
/// >= separation. Labels cycle 0, 1, ..., n_classes - 1.
ActivationSet make_blobs(int n, int n_classes, int d, double within_std, double separation, std::uint64_t seed);

}  // namespace probekit
