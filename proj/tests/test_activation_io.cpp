#include "probekit/activation_io.hpp"

#include "oracles.hpp"
#include "test_util.hpp"

#include <doctest.h>
#include <json.hpp>

#include <chrono>
#include <cstring>
#include <limits>

using namespace probekit;
using testutil::TempDir;

namespace {

ActivationSet random_set(int n, int p, int classes, bool preds, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ActivationSet s;
  s.layer_id = "block3";
  s.data = oracle::gaussian(n, p, rng).cast<float>();
  s.labels = oracle::random_labels(n, classes, rng);
  if (preds) s.network_preds = oracle::random_labels(n, classes, rng);
  s.n_classes = static_cast<std::uint64_t>(classes);
  return s;
}

std::string error_of(const std::filesystem::path& p) {
  try {
    read_activation_set(p);
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("2x3 set has header plus 24 data bytes plus 4 label bytes") {
  TempDir dir("io");
  ActivationSet s;
  s.layer_id = "maxpool";
  s.data.resize(2, 3);
  s.data << 1, 2, 3, 4, 5, 6;
  s.labels.resize(2);
  s.labels << 0, 1;
  s.n_classes = 2;
  write_activation_set(s, dir / "a.pak");
  const auto expected = ActivationSetHeader::header_size_for(s.layer_id.size()) + 24 + 4;
  CHECK(std::filesystem::file_size(dir / "a.pak") == expected);
  CHECK(ActivationSetHeader::header_size_for(7) == 44 + 7);
}

TEST_CASE("writing NaN data fails") {
  TempDir dir("io");
  auto s = random_set(4, 3, 2, false, 1);
  s.data(2, 1) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_WITH_AS(write_activation_set(s, dir / "a.pak"), "non-finite data", DataError);
  s.data(2, 1) = std::numeric_limits<float>::infinity();
  CHECK_THROWS_WITH_AS(write_activation_set(s, dir / "a.pak"), "non-finite data", DataError);
}

TEST_CASE("labels must be below n_classes") {
  TempDir dir("io");
  auto s = random_set(4, 3, 2, false, 1);
  s.labels[3] = 2;
  CHECK_THROWS_AS(write_activation_set(s, dir / "a.pak"), DataError);
  s.labels[3] = 1;
  s.network_preds = Labels::Constant(4, 5);
  CHECK_THROWS_AS(write_activation_set(s, dir / "a.pak"), DataError);
  s.network_preds = Labels::Constant(3, 0);
  CHECK_THROWS_AS(write_activation_set(s, dir / "a.pak"), DataError);
}

TEST_CASE("100x50 round trip is exact") {
  TempDir dir("io");
  for (bool preds : {false, true}) {
    for (Split split : {Split::Train, Split::Test}) {
      auto s = random_set(100, 50, 7, preds, 42);
      s.split = split;
      write_activation_set(s, dir / "r.pak");
      const auto back = read_activation_set(dir / "r.pak");
      CHECK(back.layer_id == s.layer_id);
      CHECK(back.n_classes == s.n_classes);
      CHECK(back.split == split);
      CHECK(std::memcmp(back.data.data(), s.data.data(), sizeof(float) * 5000) == 0);
      CHECK(back.labels == s.labels);
      REQUIRE(back.network_preds.has_value() == preds);
      if (preds) CHECK(*back.network_preds == *s.network_preds);

      // Re-writing the loaded set reproduces the same bytes.
      const auto bytes = testutil::slurp(dir / "r.pak");
      write_activation_set(back, dir / "r2.pak");
      CHECK(testutil::slurp(dir / "r2.pak") == bytes);
    }
  }
}

TEST_CASE("bad magic, empty file and version mismatch") {
  TempDir dir("io");
  write_activation_set(random_set(5, 4, 3, false, 3), dir / "ok.pak");
  std::string bytes = testutil::slurp(dir / "ok.pak");

  std::string bad = bytes;
  std::memcpy(bad.data(), "XXXXXXXX", 8);
  testutil::spit(dir / "bad.pak", bad);
  CHECK(error_of(dir / "bad.pak") == "bad magic");
  CHECK_THROWS_WITH_AS(validate_header(dir / "bad.pak"), "bad magic", DataError);

  testutil::spit(dir / "empty.pak", "");
  CHECK(error_of(dir / "empty.pak") == "truncated header");

  std::string v2 = bytes;
  v2[8] = 2;
  testutil::spit(dir / "v2.pak", v2);
  CHECK(error_of(dir / "v2.pak").rfind("version mismatch", 0) == 0);
}

TEST_CASE("truncation at any offset is reported") {
  TempDir dir("io");
  const auto s = random_set(20, 6, 3, true, 5);
  write_activation_set(s, dir / "ok.pak");
  const std::string bytes = testutil::slurp(dir / "ok.pak");
  const auto header = ActivationSetHeader::header_size_for(s.layer_id.size());
  for (std::size_t k : {std::size_t{0}, std::size_t{3}, std::size_t{8}, std::size_t{20}, std::size_t{40},
                        static_cast<std::size_t>(header - 1)}) {
    testutil::spit(dir / "t.pak", bytes.substr(0, k));
    CHECK(error_of(dir / "t.pak") == "truncated header");
  }
  for (std::size_t k : {static_cast<std::size_t>(header), static_cast<std::size_t>(header + 1),
                        static_cast<std::size_t>(header + 4 * 6 * 10 + 2), bytes.size() - 41, bytes.size() - 1}) {
    testutil::spit(dir / "t.pak", bytes.substr(0, k));
    CHECK(error_of(dir / "t.pak") == "truncated payload");
    CHECK_THROWS_WITH_AS(validate_header(dir / "t.pak"), "truncated payload", DataError);
  }
}

TEST_CASE("validate_header reads flags and split") {
  TempDir dir("io");
  auto s = random_set(10, 4, 3, true, 9);
  s.split = Split::Test;
  write_activation_set(s, dir / "p.pak");
  const auto h = validate_header(dir / "p.pak");
  CHECK(h.has_preds());
  CHECK((h.flags & kFlagHasPreds) != 0);
  CHECK(h.split() == Split::Test);
  CHECK(h.n_samples == 10);
  CHECK(h.n_features == 4);
  CHECK(h.n_classes == 3);
  CHECK(h.layer_id == "block3");
  CHECK(h.payload_size() == 10 * 4 * 4 + 10 * 2 * 2);
}

TEST_CASE("header of a 50000x16384 file validates in under 10 ms") {
  TempDir dir("io");
  ActivationSet tiny = random_set(2, 2, 10, false, 1);
  tiny.layer_id = "layer1";
  write_activation_set(tiny, dir / "big.pak");
  // Patch the dimensions, then extend the file sparsely to the promised size.
  std::string bytes = testutil::slurp(dir / "big.pak");
  const std::uint64_t n = 50000;
  const std::uint64_t p = 16384;
  std::memcpy(bytes.data() + 12, &n, 8);
  std::memcpy(bytes.data() + 20, &p, 8);
  const auto header = ActivationSetHeader::header_size_for(6);
  bytes.resize(header);
  testutil::spit(dir / "big.pak", bytes);
  std::filesystem::resize_file(dir / "big.pak", header + n * p * 4 + n * 2);

  const auto t0 = std::chrono::steady_clock::now();
  const auto h = validate_header(dir / "big.pak");
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  CHECK(h.n_samples == n);
  CHECK(h.n_features == p);
  CHECK(ms < 10.0);
}

TEST_CASE("manifest round trip resolves relative paths") {
  TempDir dir("io");
  Manifest m;
  m.network_accuracy = 0.925;
  m.n_classes = 10;
  for (int i = 0; i < 3; ++i) {
    ManifestLayer l;
    l.layer_id = "block" + std::to_string(i);
    l.train_path = "acts/block" + std::to_string(i) + "_train.pak";
    l.test_path = "acts/block" + std::to_string(i) + "_test.pak";
    l.dim = 64u << i;
    l.tap_point = "residual block output";
    m.layers.push_back(l);
  }
  write_manifest(m, dir / "manifest.json");
  const Manifest back = read_manifest(dir / "manifest.json");
  REQUIRE(back.layers.size() == 3);
  CHECK(back.network_accuracy == doctest::Approx(0.925));
  CHECK(back.n_classes == 10u);
  CHECK(back.layers[2].dim == 256);
  CHECK(back.layers[1].train_path == dir.path() / "acts/block1_train.pak");
  CHECK(back.layers[0].tap_point == "residual block output");

  const auto j = nlohmann::json::parse(testutil::slurp(dir / "manifest.json"));
  CHECK(j["layers"][0]["train_path"] == "acts/block0_train.pak");
}

TEST_CASE("malformed manifests are data errors") {
  TempDir dir("io");
  testutil::spit(dir / "a.json", "{not json");
  CHECK_THROWS_AS(read_manifest(dir / "a.json"), DataError);
  testutil::spit(dir / "b.json", R"({"layers": []})");
  CHECK_THROWS_AS(read_manifest(dir / "b.json"), DataError);
  testutil::spit(dir / "c.json", R"({"layers": [{"layer_id": "x"}]})");
  CHECK_THROWS_AS(read_manifest(dir / "c.json"), DataError);
  CHECK_THROWS_AS(read_manifest(dir / "missing.json"), DataError);
}
