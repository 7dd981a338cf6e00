#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "mmcl/errors.hpp"
#include "mmcl/latent_model.hpp"

using namespace mmcl;
using Eigen::Index;
using Eigen::MatrixXd;

namespace {

MatrixXd sample_cov(const MatrixXd& x) {
  const MatrixXd centered = x.rowwise() - x.colwise().mean();
  return centered.transpose() * centered / static_cast<double>(x.rows() - 1);
}

// |p_hat - p| within z standard errors of a binomial proportion.
bool binomial_ok(double p_hat, double p, double n, double z = 5.0) {
  return std::abs(p_hat - p) <= z * std::sqrt(p * (1 - p) / n) + 1e-12;
}

}  // namespace

TEST_CASE("independent latents have identity moments") {
  const auto spec = LatentSpec::independent(3, 4, 2, 2, 0.75);
  const auto b = sample_latents(spec, 40000, 11);
  for (const MatrixXd* m : {&b.content, &b.style, &b.modality1, &b.modality2}) {
    CHECK(m->colwise().mean().cwiseAbs().maxCoeff() < 0.03);
    const MatrixXd cov = sample_cov(*m);
    CHECK((cov - MatrixXd::Identity(cov.rows(), cov.cols())).cwiseAbs().maxCoeff() < 0.05);
  }
}

TEST_CASE("content is shared exactly and unchanged style coordinates are copied") {
  const auto spec = LatentSpec::independent(5, 5, 5, 5, 0.75);
  const auto b = sample_latents(spec, 5000, 3);
  const MatrixXd z1 = b.z1();
  const MatrixXd z2 = b.z2();
  CHECK(z1.leftCols(5) == z2.leftCols(5));
  CHECK(b.style1 == b.style);
  for (Index i = 0; i < b.size(); ++i)
    for (int j = 0; j < 5; ++j) {
      if (b.changed2(i, j))
        CHECK(b.style2(i, j) != b.style(i, j));
      else
        CHECK(b.style2(i, j) == b.style(i, j));
    }
}

TEST_CASE("change-set frequency matches the perturbation probability") {
  for (double p : {0.0, 0.25, 0.75, 1.0}) {
    const auto spec = LatentSpec::independent(2, 6, 1, 1, p);
    const auto b = sample_latents(spec, 20000, 5);
    const double n = static_cast<double>(b.changed2.size());
    const double p_hat = static_cast<double>(b.changed2.count()) / n;
    CHECK(binomial_ok(p_hat, p, n));
    // Dimensions enter the change set independently: P(j and k) = p^2.
    Index both = 0;
    for (Index i = 0; i < b.size(); ++i) both += b.changed2(i, 0) && b.changed2(i, 1);
    CHECK(binomial_ok(static_cast<double>(both) / static_cast<double>(b.size()), p * p,
                      static_cast<double>(b.size())));
  }
}

TEST_CASE("perturbations on changed coordinates have the configured variance") {
  GenerativeSettings g;
  g.eps_sigma = 2.0;
  g.perturb_prob = 0.5;
  const auto spec = build_latent_spec(g, 1);
  const auto b = sample_latents(spec, 40000, 2);
  double sum = 0.0, sq = 0.0, count = 0.0;
  for (Index i = 0; i < b.size(); ++i)
    for (int j = 0; j < spec.n_s; ++j)
      if (b.changed2(i, j)) {
        const double e = b.style2(i, j) - b.style(i, j);
        sum += e;
        sq += e * e;
        count += 1.0;
      }
  const double mean = sum / count;
  CHECK(std::abs(mean) < 0.05);
  CHECK(sq / count - mean * mean == doctest::Approx(4.0).epsilon(0.03));
}

TEST_CASE("causal style follows a + B c") {
  GenerativeSettings g;
  g.causal = true;
  const auto spec = build_latent_spec(g, 7);
  REQUIRE(spec.has_causal_link());
  const auto b = sample_latents(spec, 50000, 8);
  // Least squares of s on [1, c] by normal equations.
  MatrixXd design(b.size(), spec.n_c + 1);
  design.col(0).setOnes();
  design.rightCols(spec.n_c) = b.content;
  const MatrixXd coef = (design.transpose() * design).ldlt().solve(design.transpose() * b.style);
  CHECK((coef.row(0).transpose() - spec.causal_a).cwiseAbs().maxCoeff() < 0.05);
  CHECK((coef.bottomRows(spec.n_c).transpose() - spec.causal_B).cwiseAbs().maxCoeff() < 0.05);
}

TEST_CASE("statistical dependence uses a random correlation matrix") {
  Rng rng(4);
  const MatrixXd corr = random_correlation(6, rng);
  CHECK((corr.diagonal().array() == 1.0).all());
  CHECK(corr.isApprox(corr.transpose(), 0.0));
  CHECK(corr.llt().info() == Eigen::Success);
  CHECK(corr.cwiseAbs().maxCoeff() <= 1.0);

  GenerativeSettings g;
  g.statistical = true;
  const auto spec = build_latent_spec(g, 9);
  CHECK((spec.cov_c - MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff() > 0.0);
  const auto b = sample_latents(spec, 50000, 10);
  CHECK((sample_cov(b.content) - spec.cov_c).cwiseAbs().maxCoeff() < 0.05);
  CHECK((sample_cov(b.style) - spec.cov_s).cwiseAbs().maxCoeff() < 0.05);
}

TEST_CASE("symmetric mode perturbs both sides independently") {
  auto spec = LatentSpec::independent(2, 3, 1, 1, 1.0);
  spec.mode = SamplingMode::symmetric;
  const auto b = sample_pairs(spec, 40000, 12);
  CHECK(b.mode == SamplingMode::symmetric);
  CHECK(b.changed1.all());
  CHECK(b.changed2.all());
  // s~1 = s + e1, s~2 = s + e2: corr = var(s) / (var(s) + var(e)) = 1/2.
  for (int j = 0; j < 3; ++j) {
    const Eigen::ArrayXd x = b.style1.col(j).array() - b.style1.col(j).mean();
    const Eigen::ArrayXd y = b.style2.col(j).array() - b.style2.col(j).mean();
    const double r = (x * y).sum() / std::sqrt((x * x).sum() * (y * y).sum());
    CHECK(r == doctest::Approx(0.5).epsilon(0.05));
  }
  CHECK_THROWS_AS(sample_latents_symmetric(LatentSpec::independent(1, 1, 1, 1, 0.5), 4, 1), ConfigError);
}

TEST_CASE("sampling is deterministic per seed") {
  const auto spec = LatentSpec::independent(3, 3, 3, 3, 0.75);
  const auto a = sample_latents(spec, 100, 42);
  const auto b = sample_latents(spec, 100, 42);
  const auto c = sample_latents(spec, 100, 43);
  CHECK(a.z1() == b.z1());
  CHECK(a.z2() == b.z2());
  CHECK(a.changed2 == b.changed2);
  CHECK(a.z1() != c.z1());
}

TEST_CASE("pair(i) matches the concatenated rows") {
  const auto spec = LatentSpec::independent(2, 3, 1, 2, 0.5);
  const auto b = sample_latents(spec, 10, 1);
  const auto p = b.pair(4);
  CHECK(p.z1 == b.z1().row(4).transpose());
  CHECK(p.z2 == b.z2().row(4).transpose());
  for (int j : p.changed) CHECK(b.changed2(4, j));
  CHECK(static_cast<Index>(p.changed.size()) == b.changed2.row(4).count());
}

TEST_CASE("content intervention is a shared row permutation") {
  const auto spec = LatentSpec::independent(3, 2, 2, 2, 0.75);
  const auto b = sample_latents(spec, 500, 5);
  const auto iv = intervene_content(b, 6);
  CHECK(iv.style == b.style);
  CHECK(iv.style2 == b.style2);
  CHECK(iv.modality1 == b.modality1);
  CHECK(iv.content != b.content);
  // Every intervened row is some original row.
  std::vector<bool> used(b.size(), false);
  for (Index i = 0; i < iv.size(); ++i) {
    Index hit = -1;
    for (Index k = 0; k < b.size(); ++k)
      if (!used[k] && iv.content.row(i) == b.content.row(k)) {
        hit = k;
        break;
      }
    REQUIRE(hit >= 0);
    used[hit] = true;
  }
  CHECK(iv.z1().leftCols(3) == iv.z2().leftCols(3));
  CHECK_THROWS_AS(intervene_content(LatentBatch{}, 1), ArgumentError);
}

TEST_CASE("intervention permutations are uniform") {
  // Where row 0 lands over many seeds: chi-square against uniform on 8 slots.
  const auto spec = LatentSpec::independent(1, 1, 1, 1, 0.5);
  auto b = sample_latents(spec, 8, 1);
  for (Index i = 0; i < 8; ++i) b.content(i, 0) = static_cast<double>(i);
  std::vector<double> counts(8, 0.0);
  const int trials = 8000;
  for (int t = 0; t < trials; ++t) {
    const auto iv = intervene_content(b, static_cast<std::uint64_t>(t));
    for (Index i = 0; i < 8; ++i)
      if (iv.content(i, 0) == 0.0) counts[static_cast<std::size_t>(i)] += 1.0;
  }
  double chi2 = 0.0;
  const double expected = trials / 8.0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  // 7 degrees of freedom; 0.999 quantile is 24.3.
  CHECK(chi2 < 24.3);
}

TEST_CASE("discrete blocks draw uniform classes") {
  const MatrixXd shape(20000, 2);
  const auto codes = discretize_block(shape, 5, 3);
  CHECK(codes.minCoeff() >= 0);
  CHECK(codes.maxCoeff() <= 4);
  for (int k = 0; k < 5; ++k) {
    const double freq = static_cast<double>((codes.array() == k).count()) / static_cast<double>(codes.size());
    CHECK(binomial_ok(freq, 0.2, static_cast<double>(codes.size())));
  }
  CHECK(recover_classes(embed_classes(codes, 5), 5) == codes);
  CHECK(embed_classes(Eigen::MatrixXi::Constant(1, 1, 0), 3)(0, 0) == -1.0);
  CHECK_THROWS_AS(discretize_block(shape, 1, 3), ArgumentError);
}

TEST_CASE("discrete style perturbation always moves to another class") {
  GenerativeSettings g;
  g.discrete_blocks[BlockKind::style] = 3;
  const auto spec = build_latent_spec(g, 2);
  const auto b = sample_latents(spec, 5000, 3);
  for (Index i = 0; i < b.size(); ++i)
    for (int j = 0; j < spec.n_s; ++j) {
      CHECK(std::abs(b.style2(i, j)) <= 1.0);
      CHECK((b.style2(i, j) != b.style(i, j)) == b.changed2(i, j));
    }
}

TEST_CASE("spec validation") {
  auto spec = LatentSpec::independent(2, 2, 2, 2, 0.5);
  CHECK_NOTHROW(spec.validate());
  auto bad = spec;
  bad.perturb_prob = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = spec;
  bad.cov_c(0, 0) = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = spec;
  bad.n_c = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = spec;
  bad.discrete_blocks[BlockKind::style] = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(sample_latents(spec, 0, 1), ArgumentError);
}

TEST_CASE("csv header lists every block") {
  const auto spec = LatentSpec::independent(1, 1, 1, 1, 0.5);
  const auto b = sample_latents(spec, 2, 1);
  std::ostringstream os;
  b.write_csv(os);
  std::istringstream is(os.str());
  std::string header;
  std::getline(is, header);
  CHECK(header == "c_0,s_0,s_tilde_0,m1_0,m2_0");
  int rows = 0;
  for (std::string line; std::getline(is, line);) ++rows;
  CHECK(rows == 2);
}
