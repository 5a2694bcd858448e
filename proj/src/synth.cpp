#include "probekit/synth.hpp"

#include "probekit/parallel.hpp"
#include "probekit/probes.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <random>
#include <thread>

namespace probekit {
namespace {

constexpr double kCollapsedWithinFactor = 1e-3;

Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  return m;
}

/// rows x cols matrix with orthonormal columns (cols <= rows).
Eigen::MatrixXd random_orthonormal(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian(rows, cols, rng));
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(rows, cols);
  // Fix column signs against R's diagonal so the map is Haar-distributed.
  for (Eigen::Index j = 0; j < cols; ++j)
    if (qr.matrixQR()(j, j) < 0) q.col(j) *= -1.0;
  return q;
}

/// C x signal_dim coordinates of a regular simplex with the given pairwise distance.
Eigen::MatrixXd simplex_means(int n_classes, int signal_dim, double separation, std::mt19937_64& rng) {
  const int c = n_classes;
  Eigen::MatrixXd centered = Eigen::MatrixXd::Identity(c, c);
  centered.rowwise() -= centered.colwise().mean();
  // Orthonormal basis of the sum-zero subspace: the top c-1 right singular vectors.
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeFullV);
  Eigen::MatrixXd coords = centered * svd.matrixV().leftCols(c - 1);  // c x (c-1)
  coords *= separation / std::sqrt(2.0);  // identity rows are sqrt(2) apart

  if (signal_dim < c - 1) return coords * random_orthonormal(c - 1, signal_dim, rng);
  Eigen::MatrixXd padded = Eigen::MatrixXd::Zero(c, signal_dim);
  padded.leftCols(c - 1) = coords;
  return padded;
}

Labels cyclic_labels(int n, int n_classes) {
  Labels y(n);
  for (int i = 0; i < n; ++i) y[i] = i % n_classes;
  return y;
}

FeatureMatrix sample_layer(const Eigen::MatrixXd& basis, const Eigen::MatrixXd& means, const Labels& y,
                           double within, double noise, std::mt19937_64& rng) {
  const Eigen::Index n = y.size();
  const Eigen::Index dim = basis.rows();
  const Eigen::Index k = basis.cols();
  Eigen::MatrixXd signal = gaussian(n, k, rng) * within;
  for (Eigen::Index i = 0; i < n; ++i) signal.row(i) += means.row(y[i]);
  Eigen::MatrixXd ambient = gaussian(n, dim, rng) * noise;
  ambient -= (ambient * basis) * basis.transpose();
  return (signal * basis.transpose() + ambient).cast<float>();
}

}  // namespace

LayerFamilySpec collapse_demo_spec(std::uint64_t seed) {
  LayerFamilySpec s;
  s.dims = {128, 120, 112, 104, 96, 88, 80, 72, 64};
  s.within_std = {0.6, 0.5, 0.42, 0.35, 0.28, 0.2, 0.15, 0.1, 0.05};
  s.noise_dims_std = 0.005;
  s.collapse_at = 5;
  s.seed = seed;
  return s;
}

void validate_spec(const LayerFamilySpec& s) {
  auto fail = [](const std::string& msg) { throw ConfigError("synth spec: " + msg); };
  if (s.n_layers < 1) fail("n_layers must be >= 1");
  if (s.n_classes < 2) fail("n_classes must be >= 2");
  if (s.n_train < s.n_classes || s.n_test < 1) fail("n_train must be >= n_classes and n_test >= 1");
  if (static_cast<int>(s.dims.size()) != s.n_layers) fail("dims must list one entry per layer");
  if (static_cast<int>(s.within_std.size()) != s.n_layers) fail("within_std must list one entry per layer");
  if (s.signal_dim < 1) fail("signal_dim must be >= 1");
  for (int d : s.dims)
    if (d < s.signal_dim) fail("signal_dim must be <= every layer dim");
  for (double w : s.within_std)
    if (!(w > 0)) fail("within_std entries must be positive");
  if (!(s.noise_dims_std >= 0)) fail("noise_dims_std must be >= 0");
  if (!(s.separation > 0)) fail("separation must be positive");
  if (s.collapse_at && (*s.collapse_at < 0 || *s.collapse_at >= s.n_layers)) fail("collapse_at must be < n_layers");
}

LayerFamilySpec layer_family_spec_from_json(const nlohmann::json& j) {
  LayerFamilySpec s;
  try {
    s.n_layers = j.at("n_layers").get<int>();
    s.n_train = j.at("n_train").get<int>();
    s.n_test = j.at("n_test").get<int>();
    s.n_classes = j.at("n_classes").get<int>();
    s.dims = j.at("dims").get<std::vector<int>>();
    s.signal_dim = j.at("signal_dim").get<int>();
    s.within_std = j.at("within_std").get<std::vector<double>>();
    s.noise_dims_std = j.value("noise_dims_std", 0.0);
    if (j.contains("collapse_at") && !j["collapse_at"].is_null()) s.collapse_at = j["collapse_at"].get<int>();
    s.separation = j.value("separation", 1.0);
    s.seed = j.value("seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synth spec: ") + e.what());
  }
  validate_spec(s);
  return s;
}

nlohmann::json to_json(const LayerFamilySpec& s) {
  return {{"n_layers", s.n_layers},
          {"n_train", s.n_train},
          {"n_test", s.n_test},
          {"n_classes", s.n_classes},
          {"dims", s.dims},
          {"signal_dim", s.signal_dim},
          {"within_std", s.within_std},
          {"noise_dims_std", s.noise_dims_std},
          {"collapse_at", s.collapse_at ? nlohmann::json(*s.collapse_at) : nlohmann::json()},
          {"separation", s.separation},
          {"seed", s.seed}};
}

std::vector<LayerSplits> generate_layer_family(const LayerFamilySpec& spec) {
  validate_spec(spec);
  std::mt19937_64 family_rng(derive_seed(spec.seed, 0xfa11));
  const Eigen::MatrixXd means = simplex_means(spec.n_classes, spec.signal_dim, spec.separation, family_rng);
  const Labels train_labels = cyclic_labels(spec.n_train, spec.n_classes);
  const Labels test_labels = cyclic_labels(spec.n_test, spec.n_classes);

  std::vector<LayerSplits> layers(static_cast<std::size_t>(spec.n_layers));
  parallel_for(layers.size(), std::max(1u, std::thread::hardware_concurrency()), [&](std::size_t l) {
    std::mt19937_64 rng(derive_seed(spec.seed, l + 1));
    const int dim = spec.dims[l];
    const Eigen::MatrixXd basis = random_orthonormal(dim, spec.signal_dim, rng);
    const bool collapsed = spec.collapse_at && static_cast<int>(l) >= *spec.collapse_at;
    const double within = collapsed ? kCollapsedWithinFactor * spec.separation : spec.within_std[l];

    const std::string id = "layer" + std::to_string(l);
    LayerSplits& out = layers[l];
    out.train = {id, sample_layer(basis, means, train_labels, within, spec.noise_dims_std, rng), train_labels,
                 std::nullopt, static_cast<std::uint64_t>(spec.n_classes), Split::Train};
    out.test = {id, sample_layer(basis, means, test_labels, within, spec.noise_dims_std, rng), test_labels,
                std::nullopt, static_cast<std::uint64_t>(spec.n_classes), Split::Test};
  });

  // Simulated network head: nearest class centre on the final layer.
  const LayerSplits& last = layers.back();
  const auto head = fit_ncc<double>(last.train.data, last.train.labels, spec.n_classes);
  const Labels train_preds = predict_ncc(head, last.train.data);
  const Labels test_preds = predict_ncc(head, last.test.data);
  for (auto& layer : layers) {
    layer.train.network_preds = train_preds;
    layer.test.network_preds = test_preds;
  }
  return layers;
}

Manifest write_layer_family(const LayerFamilySpec& spec, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto layers = generate_layer_family(spec);
  Manifest manifest;
  manifest.n_classes = static_cast<std::uint64_t>(spec.n_classes);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "layer%02zu", l);
    const std::string train_name = std::string(stem) + "_train.pak";
    const std::string test_name = std::string(stem) + "_test.pak";
    write_activation_set(layers[l].train, dir / train_name);
    write_activation_set(layers[l].test, dir / test_name);
    ManifestLayer entry;
    entry.layer_id = layers[l].train.layer_id;
    entry.train_path = train_name;
    entry.test_path = test_name;
    entry.dim = static_cast<std::uint64_t>(spec.dims[l]);
    entry.tap_point = "synthetic";
    manifest.layers.push_back(std::move(entry));
  }
  const auto& last = layers.back().test;
  manifest.network_accuracy = evaluate_accuracy(*last.network_preds, last.labels);
  write_manifest(manifest, dir / "manifest.json");
  // Hand back resolved paths, matching what read_manifest would return.
  for (auto& entry : manifest.layers) {
    entry.train_path = dir / entry.train_path;
    entry.test_path = dir / entry.test_path;
  }
  return manifest;
}

ActivationSet make_blobs(int n, int n_classes, int d, double within_std, double separation, std::uint64_t seed) {
  if (n < 1 || n_classes < 2 || d < 1) throw ConfigError("make_blobs: need n >= 1, n_classes >= 2, d >= 1");
  if (!(within_std >= 0) || !(separation > 0)) throw ConfigError("make_blobs: bad std or separation");
  std::mt19937_64 rng(seed);

  // Rejection-sample centres in a cube that grows until they fit.
  double side = separation * 2.0 * std::ceil(std::pow(static_cast<double>(n_classes), 1.0 / d));
  Eigen::MatrixXd centres(n_classes, d);
  for (int attempt = 0;; ++attempt) {
    std::uniform_real_distribution<double> uniform(-side / 2, side / 2);
    int placed = 0;
    for (int tries = 0; placed < n_classes && tries < 1000; ++tries) {
      Eigen::RowVectorXd c(d);
      for (int j = 0; j < d; ++j) c[j] = uniform(rng);
      bool ok = true;
      for (int k = 0; k < placed && ok; ++k) ok = (centres.row(k) - c).norm() >= separation;
      if (ok) centres.row(placed++) = c;
    }
    if (placed == n_classes) break;
    side *= 1.25;
  }

  ActivationSet set;
  set.layer_id = "blobs";
  set.n_classes = static_cast<std::uint64_t>(n_classes);
  set.labels = cyclic_labels(n, n_classes);
  Eigen::MatrixXd x = gaussian(n, d, rng) * within_std;
  for (int i = 0; i < n; ++i) x.row(i) += centres.row(set.labels[i]);
  set.data = x.cast<float>();
  return set;
}

}  // namespace probekit
