#include "probekit/collapse.hpp"
#include "probekit/pca.hpp"
#include "probekit/preprocess.hpp"
#include "probekit/probes.hpp"
#include "probekit/synth.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <Eigen/SVD>

using namespace probekit;
using testutil::TempDir;

namespace {

LayerFamilySpec family(int layers, std::vector<double> within, std::uint64_t seed = 3) {
  LayerFamilySpec s;
  s.n_layers = layers;
  s.n_train = 400;
  s.n_test = 200;
  s.n_classes = 5;
  s.dims.assign(static_cast<std::size_t>(layers), 32);
  s.signal_dim = 4;
  s.within_std = std::move(within);
  s.noise_dims_std = 0.01;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("spec validation") {
  auto s = family(2, {0.5, 0.2});
  CHECK_NOTHROW(validate_spec(s));
  s.signal_dim = 40;
  CHECK_THROWS_AS(validate_spec(s), ConfigError);
  s = family(2, {0.5, 0.0});
  CHECK_THROWS_AS(validate_spec(s), ConfigError);
  s = family(2, {0.5});
  CHECK_THROWS_AS(validate_spec(s), ConfigError);
  s = family(2, {0.5, 0.2});
  s.collapse_at = 2;
  CHECK_THROWS_AS(validate_spec(s), ConfigError);
  CHECK_NOTHROW(validate_spec(collapse_demo_spec()));
}

TEST_CASE("spec JSON round trip") {
  auto s = family(3, {0.5, 0.3, 0.1});
  s.collapse_at = 2;
  const auto back = layer_family_spec_from_json(to_json(s));
  CHECK(to_json(back) == to_json(s));
  CHECK_THROWS_AS(layer_family_spec_from_json(nlohmann::json{{"n_layers", 2}}), ConfigError);
}

TEST_CASE("near-zero within-class spread gives near-zero nc1") {
  auto s = family(3, {1e-6, 1e-6, 1e-6});
  s.noise_dims_std = 0;
  const auto layers = generate_layer_family(s);
  for (const auto& l : layers) CHECK(nc1_ratio(l.train.data, l.train.labels) < 1e-6);
}

TEST_CASE("collapsed layers use a tiny within-class spread") {
  auto s = family(3, {0.5, 0.5, 0.5});
  s.collapse_at = 1;
  s.noise_dims_std = 0;
  const auto layers = generate_layer_family(s);
  CHECK(nc1_ratio(layers[0].train.data, layers[0].train.labels) > 0.1);
  CHECK(nc1_ratio(layers[1].train.data, layers[1].train.labels) < 1e-3);
  CHECK(nc1_ratio(layers[2].train.data, layers[2].train.labels) < 1e-3);
}

TEST_CASE("decreasing within_std gives nonincreasing nc1") {
  const auto layers = generate_layer_family(family(5, {0.8, 0.6, 0.4, 0.2, 0.1}));
  double prev = std::numeric_limits<double>::infinity();
  for (const auto& l : layers) {
    const double v = nc1_ratio(l.train.data, l.train.labels);
    CHECK(v <= prev);
    prev = v;
  }
}

TEST_CASE("network predictions come from NCC on the final layer") {
  const auto layers = generate_layer_family(family(2, {0.5, 0.3}));
  const auto& last = layers.back();
  const auto head = fit_ncc(last.train.data, last.train.labels, 5);
  for (const auto& l : layers) {
    REQUIRE(l.test.network_preds.has_value());
    CHECK(*l.test.network_preds == predict_ncc(head, last.test.data));
    CHECK(l.train.split == Split::Train);
    CHECK(l.test.split == Split::Test);
  }
}

TEST_CASE("planted signal subspace is recovered by PCA") {
  const auto layers = generate_layer_family(family(1, {0.2}));
  const auto& x = layers[0].train;
  // Signal subspace from the class means themselves.
  const auto ncc = fit_ncc(x.data, x.labels);
  RowMatrix<double> means = ncc.centroids;
  means.rowwise() -= means.colwise().mean();
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(means, Eigen::ComputeThinV);
  const Eigen::MatrixXd planted = svd.matrixV().leftCols(4);

  RowMatrix<double> centered = x.data.cast<double>();
  centered.rowwise() -= centered.colwise().mean();
  const auto pca = fit_pca(centered, 4);
  // Cosines of the principal angles between the two subspaces.
  const Eigen::MatrixXd overlap = pca.components * planted;
  const Eigen::JacobiSVD<Eigen::MatrixXd> angles(overlap);
  const double max_angle_deg = std::acos(std::min(1.0, angles.singularValues().minCoeff())) * 180.0 / M_PI;
  CHECK(max_angle_deg < 5.0);
  CHECK(explained_variance_cumulative(pca, 4) >= 0.95);
}

TEST_CASE("equal seeds give byte-identical files") {
  TempDir dir("synth");
  const auto s = family(2, {0.5, 0.2});
  write_layer_family(s, dir.path() / "a");
  write_layer_family(s, dir.path() / "b");
  for (const char* f : {"layer00_train.pak", "layer01_test.pak", "manifest.json"})
    CHECK(testutil::slurp(dir.path() / "a" / f) == testutil::slurp(dir.path() / "b" / f));
  auto other = s;
  other.seed = 4;
  write_layer_family(other, dir.path() / "c");
  CHECK(testutil::slurp(dir.path() / "a/layer00_train.pak") != testutil::slurp(dir.path() / "c/layer00_train.pak"));
}

TEST_CASE("written family is readable and consistent with the manifest") {
  TempDir dir("synth");
  const Manifest m = write_layer_family(family(2, {0.5, 0.2}), dir.path());
  const Manifest read = read_manifest(dir / "manifest.json");
  REQUIRE(read.layers.size() == 2);
  CHECK(read.layers[1].train_path == m.layers[1].train_path);
  const auto set = read_activation_set(read.layers[1].test_path);
  CHECK(set.n_features() == read.layers[1].dim);
  CHECK(set.split == Split::Test);
  CHECK(read.network_accuracy.has_value());
}

TEST_CASE("blobs: tight clusters are perfectly separable, wide ones are chance") {
  const auto tight = make_blobs(500, 10, 8, 0.01, 1.0, 1);
  CHECK(evaluate_accuracy(predict_ncc(fit_ncc(tight.data, tight.labels), tight.data), tight.labels) == 1.0);

  // Noise dwarfs the separation, so held-out accuracy sits at chance.
  const auto train = make_blobs(2000, 10, 8, 50.0, 1.0, 2);
  const auto test = make_blobs(2000, 10, 8, 50.0, 1.0, 3);
  const double acc = evaluate_accuracy(predict_ncc(fit_ncc(train.data, train.labels), test.data), test.labels);
  CHECK(std::abs(acc - 0.1) < 0.05);
}

TEST_CASE("blob centres respect the separation and seeds reproduce") {
  const auto a = make_blobs(300, 6, 3, 0.0, 2.0, 9);
  const auto b = make_blobs(300, 6, 3, 0.0, 2.0, 9);
  CHECK(a.data == b.data);
  CHECK(a.labels == b.labels);
  const auto m = fit_ncc(a.data, a.labels);
  for (int i = 0; i < 6; ++i)
    for (int j = i + 1; j < 6; ++j) CHECK((m.centroids.row(i) - m.centroids.row(j)).norm() >= 2.0 - 1e-5);
}
