#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "mmcl/errors.hpp"
#include "mmcl/objective.hpp"
#include "mmcl/rng.hpp"

using namespace mmcl;
using Eigen::Index;
using Eigen::MatrixXd;

namespace {

const Similarity kAll[] = {Similarity::neg_euclidean, Similarity::neg_sq_euclidean, Similarity::cosine};

double sim_oracle(const MatrixXd& a, Index i, const MatrixXd& b, Index j, Similarity s) {
  const Eigen::RowVectorXd x = a.row(i);
  const Eigen::RowVectorXd y = b.row(j);
  switch (s) {
    case Similarity::neg_euclidean: return -(x - y).norm();
    case Similarity::neg_sq_euclidean: return -(x - y).squaredNorm();
    case Similarity::cosine: return x.dot(y) / (x.norm() * y.norm());
  }
  return 0.0;
}

// -mean_i log( exp(S_ii/tau) / sum_j exp(S_ij/tau) ), no stabilization.
double loss_oracle(const MatrixXd& a, const MatrixXd& b, Similarity s, double tau) {
  double total = 0.0;
  for (Index i = 0; i < a.rows(); ++i) {
    double denom = 0.0;
    for (Index j = 0; j < b.rows(); ++j) denom += std::exp(sim_oracle(a, i, b, j, s) / tau);
    total -= std::log(std::exp(sim_oracle(a, i, b, i, s) / tau) / denom);
  }
  return total / static_cast<double>(a.rows());
}

MatrixXd fd_grad(const MatrixXd& a, const MatrixXd& b, const ObjectiveConfig& cfg, bool wrt_first, bool sym,
                 double h = 1e-5) {
  MatrixXd x = wrt_first ? a : b;
  MatrixXd g(x.rows(), x.cols());
  auto eval = [&](const MatrixXd& v) {
    const MatrixXd& p = wrt_first ? v : a;
    const MatrixXd& q = wrt_first ? b : v;
    return sym ? sym_info_nce(p, q, cfg).loss : info_nce(p, q, cfg).loss;
  };
  for (Index i = 0; i < x.size(); ++i) {
    const double keep = x(i);
    x(i) = keep + h;
    const double up = eval(x);
    x(i) = keep - h;
    const double down = eval(x);
    x(i) = keep;
    g(i) = (up - down) / (2 * h);
  }
  return g;
}

double rel_err(const MatrixXd& a, const MatrixXd& b) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-8});
}

}  // namespace

TEST_CASE("single pair has zero loss") {
  const MatrixXd a = MatrixXd::Constant(1, 3, 0.7);
  const MatrixXd b = MatrixXd::Constant(1, 3, -0.2);
  for (auto s : kAll) {
    const auto r = info_nce(a, b, {1.0, s});
    CHECK(r.loss == 0.0);
    CHECK(r.grad1.isZero(0.0));
    CHECK(sym_info_nce(a, a, {1.0, s}).loss == 0.0);
  }
}

TEST_CASE("constant encoders give ln K") {
  for (Index k : {2, 7, 64, 1024})
    for (auto s : kAll)
      for (double tau : {0.1, 1.0, 3.0}) {
        const MatrixXd a = MatrixXd::Constant(k, 4, 0.5);
        MatrixXd b = MatrixXd::Constant(k, 4, -1.5);
        if (s == Similarity::cosine) b.col(0).setConstant(2.0);
        CHECK(std::abs(info_nce(a, b, {tau, s}).loss - std::log(static_cast<double>(k))) <= 1e-9);
        CHECK(std::abs(sym_info_nce(a, b, {tau, s}).loss - std::log(static_cast<double>(k))) <= 1e-9);
      }
}

TEST_CASE("cosine example with two orthogonal pairs") {
  const MatrixXd e = MatrixXd::Identity(2, 2);
  const double expect = std::log(1.0 + std::exp(-1.0));
  CHECK(info_nce(e, e, {1.0, Similarity::cosine}).loss == doctest::Approx(expect).epsilon(1e-14));
  CHECK(expect == doctest::Approx(0.3133).epsilon(1e-4));
}

TEST_CASE("loss matches a brute-force softmax") {
  Rng rng(1);
  for (auto s : kAll)
    for (double tau : {0.5, 1.0, 2.0}) {
      const MatrixXd a = standard_normal(6, 3, rng);
      const MatrixXd b = standard_normal(6, 3, rng);
      CHECK(info_nce(a, b, {tau, s}).loss == doctest::Approx(loss_oracle(a, b, s, tau)).epsilon(1e-12));
      CHECK(info_nce(a, b, {tau, s}).loss >= 0.0);
      const MatrixXd sim = similarity_matrix(a, b, s);
      for (Index i = 0; i < 6; ++i)
        for (Index j = 0; j < 6; ++j) CHECK(sim(i, j) == doctest::Approx(sim_oracle(a, i, b, j, s)).epsilon(1e-12));
    }
}

TEST_CASE("gradients match finite differences") {
  Rng rng(2);
  for (auto s : kAll)
    for (Index k : {2, 5, 8}) {
      CAPTURE(to_string(s));
      CAPTURE(k);
      const MatrixXd a = standard_normal(k, 4, rng);
      const MatrixXd b = standard_normal(k, 4, rng);
      const ObjectiveConfig cfg{0.7, s};
      const auto r = info_nce(a, b, cfg);
      CHECK(rel_err(r.grad1, fd_grad(a, b, cfg, true, false)) <= 1e-4);
      CHECK(rel_err(r.grad2, fd_grad(a, b, cfg, false, false)) <= 1e-4);
      const auto q = sym_info_nce(a, b, cfg);
      CHECK(rel_err(q.grad1, fd_grad(a, b, cfg, true, true)) <= 1e-4);
      CHECK(rel_err(q.grad2, fd_grad(a, b, cfg, false, true)) <= 1e-4);
    }
}

TEST_CASE("coincident pair uses the zero subgradient for the Euclidean similarity") {
  MatrixXd a(2, 2);
  a << 0.0, 0.0, 1.0, 2.0;
  const auto r = info_nce(a, a, {1.0, Similarity::neg_euclidean});
  CHECK(r.grad1.allFinite());
  CHECK(r.grad2.allFinite());
}

TEST_CASE("symmetric loss is swap-invariant and averages both directions") {
  Rng rng(3);
  for (auto s : kAll) {
    const MatrixXd a = standard_normal(3, 2, rng);
    const MatrixXd b = standard_normal(3, 2, rng);
    const ObjectiveConfig cfg{1.0, s};
    const auto ab = sym_info_nce(a, b, cfg);
    const auto ba = sym_info_nce(b, a, cfg);
    CHECK(ab.loss == ba.loss);
    CHECK(ab.grad1 == ba.grad2);
    CHECK(ab.grad2 == ba.grad1);
    const double mean = 0.5 * (info_nce(a, b, cfg).loss + info_nce(b, a, cfg).loss);
    CHECK(std::abs(ab.loss - mean) <= 1e-12);
  }
}

TEST_CASE("temperature folds into the similarity") {
  Rng rng(4);
  const MatrixXd a = standard_normal(5, 3, rng);
  const MatrixXd b = standard_normal(5, 3, rng);
  const double tau = 0.3;
  // -||a-b||/tau = -||a/tau - b/tau||;  -||a-b||^2/tau = -||(a-b)/sqrt(tau)||^2.
  CHECK(info_nce(a, b, {tau, Similarity::neg_euclidean}).loss ==
        doctest::Approx(info_nce(a / tau, b / tau, {1.0, Similarity::neg_euclidean}).loss).epsilon(1e-12));
  const double r = std::sqrt(tau);
  CHECK(info_nce(a, b, {tau, Similarity::neg_sq_euclidean}).loss ==
        doctest::Approx(info_nce(a / r, b / r, {1.0, Similarity::neg_sq_euclidean}).loss).epsilon(1e-12));
}

TEST_CASE("scaling matched encodings drives the loss to zero") {
  Rng rng(5);
  const MatrixXd a = standard_normal(8, 3, rng);
  double prev = std::numeric_limits<double>::infinity();
  for (double t : {1.0, 10.0, 100.0, 1000.0}) {
    const double l = info_nce(t * a, t * a, {1.0, Similarity::neg_euclidean}).loss;
    CHECK(l <= prev);
    prev = l;
  }
  CHECK(prev < 1e-6);
}

TEST_CASE("input errors") {
  CHECK_THROWS_AS(info_nce(MatrixXd::Zero(3, 2), MatrixXd::Zero(2, 2), {}), ArgumentError);
  CHECK_THROWS_AS(info_nce(MatrixXd::Zero(0, 2), MatrixXd::Zero(0, 2), {}), ArgumentError);
  MatrixXd nan = MatrixXd::Zero(2, 2);
  nan(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(info_nce(nan, MatrixXd::Zero(2, 2), {}), NumericalError);
  CHECK_THROWS_AS(info_nce(MatrixXd::Ones(2, 2), MatrixXd::Ones(2, 2), {0.0, Similarity::neg_euclidean}),
                  ArgumentError);
  CHECK_THROWS_AS(info_nce(MatrixXd::Zero(2, 2), MatrixXd::Ones(2, 2), {1.0, Similarity::cosine}), NumericalError);
  CHECK(parse_similarity("cosine") == Similarity::cosine);
  CHECK_FALSE(parse_similarity("manhattan").has_value());
}

TEST_CASE("alignment and entropy diagnostics") {
  MatrixXd a = MatrixXd::Zero(2, 2);
  MatrixXd b = MatrixXd::Zero(2, 2);
  b(0, 0) = 1.0;
  b(1, 1) = 3.0;
  CHECK(alignment_uniformity(a, b).alignment == doctest::Approx(2.0));
  CHECK(alignment_uniformity(b, b).alignment == 0.0);

  Rng rng(6);
  const MatrixXd x = standard_normal(9, 3, rng);
  const MatrixXd y = standard_normal(9, 3, rng);
  const auto au = alignment_uniformity(x, y);
  double h1 = 0.0, h2 = 0.0;
  for (Index i = 0; i < 9; ++i) {
    double s1 = 0.0, s2 = 0.0;
    for (Index j = 0; j < 9; ++j) {
      s1 += std::exp(-(x.row(i) - y.row(j)).squaredNorm());
      s2 += std::exp(-(x.row(j) - y.row(i)).squaredNorm());
    }
    h1 -= std::log(s1 / 9.0);
    h2 -= std::log(s2 / 9.0);
  }
  CHECK(std::abs(au.entropy1 - h1 / 9.0) <= 1e-12);
  CHECK(std::abs(au.entropy2 - h2 / 9.0) <= 1e-12);
  CHECK_THROWS_AS(alignment_uniformity(MatrixXd::Zero(1, 2), MatrixXd::Zero(1, 2)), ArgumentError);
}
