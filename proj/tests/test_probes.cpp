#include "probekit/probes.hpp"
#include "probekit/synth.hpp"

#include "oracles.hpp"

#include <doctest.h>

using namespace probekit;

namespace {

// Integer lattice points so that many distances tie exactly.
oracle::Mat lattice(int n, int d, int range, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(-range, range);
  oracle::Mat x(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) x(i, j) = pick(rng);
  return x;
}

}  // namespace

TEST_CASE("k-NN with k = n predicts the global majority") {
  RowMatrix<double> x(5, 1);
  x << 0, 1, 2, 3, 100;
  Labels y(5);
  y << 1, 1, 0, 2, 1;
  const auto m = fit_knn(x, y, 5);
  RowMatrix<double> q(3, 1);
  q << -50, 2, 1000;
  CHECK(predict_knn(m, q) == Labels::Constant(3, 1));
}

TEST_CASE("k-NN k = 1 returns the label of an exactly matching point") {
  std::mt19937_64 rng(1);
  const oracle::Mat x = oracle::gaussian(50, 4, rng);
  const Labels y = oracle::random_labels(50, 5, rng);
  const auto m = fit_knn(x, y, 1);
  CHECK(predict_knn(m, x) == y);
}

TEST_CASE("k-NN equidistant two-class tie goes to the lower class") {
  RowMatrix<double> x(2, 1);
  x << -1, 1;
  Labels y(2);
  y << 1, 0;
  const auto m = fit_knn(x, y, 2);
  RowMatrix<double> q(1, 1);
  q << 0;
  CHECK(predict_knn(m, q)[0] == 0);
}

TEST_CASE("k-NN distance ties at the k boundary prefer lower training rows") {
  // Four points at distance 1 from the origin; k = 3 takes rows 0..2.
  RowMatrix<double> x(4, 2);
  x << 1, 0, 0, 1, -1, 0, 0, -1;
  Labels y(4);
  y << 2, 2, 1, 1;
  const auto m = fit_knn(x, y, 3, 3);
  CHECK(predict_knn(m, RowMatrix<double>::Zero(1, 2))[0] == 2);
  y << 1, 1, 2, 2;
  CHECK(predict_knn(fit_knn(x, y, 3, 3), RowMatrix<double>::Zero(1, 2))[0] == 1);
}

TEST_CASE("k-NN matches the exhaustive-sort oracle") {
  std::mt19937_64 rng(200);
  const oracle::Mat x = oracle::gaussian(200, 6, rng);
  const Labels y = oracle::random_labels(200, 4, rng);
  const oracle::Mat q = oracle::gaussian(30, 6, rng);
  CHECK(predict_knn(fit_knn(x, y, 10), q) == oracle::knn(x, y, q, 10, 4));

  // Lattice data with heavy ties.
  const oracle::Mat lx = lattice(300, 3, 2, rng);
  const Labels ly = oracle::random_labels(300, 3, rng);
  const oracle::Mat lq = lattice(40, 3, 2, rng);
  for (int k : {1, 3, 10}) CHECK(predict_knn(fit_knn(lx, ly, k), lq) == oracle::knn(lx, ly, lq, k, 3));
}

TEST_CASE("k-NN blocked screening handles large offsets") {
  // Large common offset stresses the |q|^2 + |x|^2 - 2q.x expansion.
  std::mt19937_64 rng(9);
  oracle::Mat x = oracle::gaussian(400, 5, rng);
  oracle::Mat q = oracle::gaussian(25, 5, rng);
  x.array() += 1e4;
  q.array() += 1e4;
  const Labels y = oracle::random_labels(400, 6, rng);
  CHECK(predict_knn(fit_knn(x, y, 7), q) == oracle::knn(x, y, q, 7, 6));
}

TEST_CASE("NCC centroid arithmetic and ties") {
  RowMatrix<double> x(3, 2);
  x << 0, 0, 2, 0, 10, 10;
  Labels y(3);
  y << 0, 0, 1;
  const auto m = fit_ncc(x, y);
  CHECK(m.centroids(0, 0) == 1.0);
  CHECK(m.centroids(0, 1) == 0.0);
  CHECK(m.centroids(1, 0) == 10.0);
  CHECK(m.centroids(1, 1) == 10.0);

  RowMatrix<double> q(3, 2);
  q << 1, 0, 10, 10, 5.5, 5;  // last one is equidistant
  const Labels p = predict_ncc(m, q);
  CHECK(p[0] == 0);
  CHECK(p[1] == 1);
  CHECK((q.row(2) - m.centroids.row(0)).squaredNorm() == (q.row(2) - m.centroids.row(1)).squaredNorm());
  CHECK(p[2] == 0);
}

TEST_CASE("NCC single sample per class") {
  std::mt19937_64 rng(4);
  const oracle::Mat x = oracle::gaussian(5, 3, rng);
  Labels y(5);
  y << 0, 1, 2, 3, 4;
  CHECK(fit_ncc(x, y).centroids == RowMatrix<double>(x));
}

TEST_CASE("NCC matches the groupwise-mean oracle") {
  const auto blobs = make_blobs(400, 6, 5, 1.5, 2.0, 77);
  const auto m = fit_ncc(blobs.data, blobs.labels);
  const oracle::Mat x = blobs.data.cast<double>();
  CHECK((m.centroids - oracle::centroids(x, blobs.labels, 6)).cwiseAbs().maxCoeff() < 1e-6);
  std::mt19937_64 rng(5);
  const oracle::Mat q = oracle::gaussian(1000, 5, rng, 4.0);
  CHECK(predict_ncc(m, q) == oracle::ncc(x, blobs.labels, q, 6));
}

TEST_CASE("NCC is invariant to a global translation") {
  const auto blobs = make_blobs(200, 4, 3, 1.0, 2.0, 5);
  std::mt19937_64 rng(6);
  const oracle::Mat q = oracle::gaussian(100, 3, rng, 3.0);
  const Labels before = predict_ncc(fit_ncc(blobs.data.cast<double>(), blobs.labels), q);
  const Eigen::RowVector3d shift(3.0, -7.0, 0.5);
  const oracle::Mat moved = blobs.data.cast<double>().rowwise() + shift;
  const oracle::Mat q_moved = q.rowwise() + shift;
  CHECK(predict_ncc(fit_ncc(moved, blobs.labels), q_moved) == before);
}

TEST_CASE("k-NN and NCC are invariant to rotations") {
  std::mt19937_64 rng(314);
  for (int trial = 0; trial < 5; ++trial) {
    const int d = 3 + 4 * trial;
    const auto blobs = make_blobs(150, 5, d, 1.0, 1.5, 100 + trial);
    const oracle::Mat x = blobs.data.cast<double>();
    const oracle::Mat q = oracle::gaussian(60, d, rng, 2.0);
    const oracle::Mat r = oracle::random_rotation(d, rng);
    CHECK(predict_knn(fit_knn(x * r, blobs.labels, 10), q * r) == predict_knn(fit_knn(x, blobs.labels, 10), q));
    CHECK(predict_ncc(fit_ncc(x * r, blobs.labels), q * r) == predict_ncc(fit_ncc(x, blobs.labels), q));
  }
}

TEST_CASE("SVM 1-D symmetric problem puts the boundary at zero") {
  RowMatrix<double> x(2, 1);
  x << -1, 1;
  Labels y(2);
  y << 0, 1;
  SvmOptions opt;
  opt.c_param = 10;
  const auto m = fit_linear_svm(x, y, opt);
  CHECK(m.converged());
  // Class 1's score w x + b crosses zero at -b / w.
  CHECK(std::abs(-m.biases[1] / m.weights(1, 0)) < 1e-3);
  CHECK(predict_svm(m, x) == y);
}

TEST_CASE("SVM rejects degenerate one-vs-rest splits") {
  RowMatrix<double> x(3, 2);
  x << 0, 0, 1, 1, 2, 2;
  Labels y(3);
  y << 0, 0, 1;
  CHECK_THROWS_WITH_AS(fit_linear_svm(x, y, SvmOptions{}, 3), doctest::Contains("degenerate binary problem"), DataError);
}

TEST_CASE("SVM objective matches the dual QP oracle") {
  std::mt19937_64 rng(58);
  for (int trial = 0; trial < 6; ++trial) {
    const int n = 10 + 6 * trial;
    const int d = 2 + trial % 4;
    const double spread = trial % 2 == 0 ? 0.3 : 2.0;  // separable, then overlapping
    const auto blobs = make_blobs(n, 3, d, spread, 2.0, 500 + trial);
    const oracle::Mat x = blobs.data.cast<double>();
    SvmOptions opt;
    opt.tol = 1e-8;
    opt.max_epochs = 200000;
    opt.seed = static_cast<std::uint64_t>(trial);
    const auto m = fit_linear_svm(x, blobs.labels, opt);
    CHECK(m.converged());
    for (int k = 0; k < 3; ++k) {
      const oracle::Vec s = (blobs.labels.array() == k).select(oracle::Vec::Ones(n), -oracle::Vec::Ones(n));
      const double ref = oracle::svm_dual_optimum(x, s, opt.c_param);
      CHECK(std::abs(m.objective[k] - ref) <= 1e-3 * std::abs(ref));
    }
  }
}

TEST_CASE("SVM dual trace is monotone and training is deterministic") {
  const auto blobs = make_blobs(120, 4, 3, 1.0, 1.5, 8);
  SvmOptions opt;
  opt.record_trace = true;
  opt.seed = 17;
  const auto a = fit_linear_svm(blobs.data, blobs.labels, opt);
  for (const auto& info : a.fit_info)
    for (std::size_t e = 1; e < info.dual_trace.size(); ++e) CHECK(info.dual_trace[e] <= info.dual_trace[e - 1] + 1e-9);
  const auto b = fit_linear_svm(blobs.data, blobs.labels, opt);
  CHECK(a.weights == b.weights);
  CHECK(a.biases == b.biases);
  opt.workers = 4;
  const auto c = fit_linear_svm(blobs.data, blobs.labels, opt);
  CHECK(a.weights == c.weights);
}

TEST_CASE("SVM separates separable data with large C") {
  const auto blobs = make_blobs(200, 4, 5, 0.2, 3.0, 12);
  SvmOptions opt;
  opt.c_param = 100;
  const auto m = fit_linear_svm(blobs.data, blobs.labels, opt);
  CHECK(evaluate_accuracy(predict_svm(m, blobs.data), blobs.labels) == 1.0);
}

TEST_CASE("SVM non-convergence is reported, not hidden") {
  const auto blobs = make_blobs(300, 3, 4, 2.0, 1.0, 3);
  SvmOptions opt;
  opt.max_epochs = 1;
  const auto m = fit_linear_svm(blobs.data, blobs.labels, opt);
  CHECK_FALSE(m.converged());
  CHECK(m.fit_info[0].duality_gap > 0);
}

TEST_CASE("predict_svm argmax rules") {
  LinearSvmModel<double> m;
  m.weights = RowMatrix<double>::Identity(4, 4);
  m.biases = Vector<double>::Zero(4);
  const RowMatrix<double> q = RowMatrix<double>::Identity(4, 4);
  Labels expected(4);
  expected << 0, 1, 2, 3;
  CHECK(predict_svm(m, q) == expected);
  // Equal scores go to the lower class.
  CHECK(predict_svm(m, RowMatrix<double>::Zero(1, 4))[0] == 0);

  std::mt19937_64 rng(1);
  m.weights = oracle::gaussian(5, 3, rng);
  m.biases = oracle::gaussian(5, 1, rng).col(0);
  const oracle::Mat queries = oracle::gaussian(200, 3, rng);
  const Labels base = predict_svm(m, queries);
  const oracle::Mat scores = (queries * m.weights.transpose()).rowwise() + m.biases.transpose();
  for (Eigen::Index i = 0; i < queries.rows(); ++i) {
    Eigen::Index arg = 0;
    scores.row(i).maxCoeff(&arg);
    CHECK(base[i] == arg);
  }
  m.biases.array() += 3.5;
  CHECK(predict_svm(m, queries) == base);
}

TEST_CASE("evaluate_accuracy") {
  Labels a(4);
  a << 0, 1, 2, 3;
  CHECK(evaluate_accuracy(a, a) == 1.0);
  CHECK(evaluate_accuracy(a, Labels(a.array() + 1)) == 0.0);
  std::mt19937_64 rng(10);
  const Labels p = oracle::random_labels(10000, 10, rng);
  const Labels t = oracle::random_labels(10000, 10, rng);
  CHECK(std::abs(evaluate_accuracy(p, t) - 0.1) < 0.01);
  CHECK_THROWS_AS(evaluate_accuracy(a, Labels(3)), DataError);
}
