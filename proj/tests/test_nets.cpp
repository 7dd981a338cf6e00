#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "mmcl/errors.hpp"
#include "mmcl/nets.hpp"
#include "mmcl/rng.hpp"

using namespace mmcl;
using Eigen::MatrixXd;

namespace {

double rel_err(const MatrixXd& a, const MatrixXd& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-8});
  return (a - b).norm() / scale;
}

// L(x) = sum(R .* net(x)); central differences for every parameter entry.
MatrixXd fd_param(EncoderNet net, int tensor, const MatrixXd& x, const MatrixXd& r, double h = 1e-5) {
  MatrixXd& p = *net.parameters()[static_cast<std::size_t>(tensor)];
  MatrixXd g(p.rows(), p.cols());
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double keep = p(i);
    p(i) = keep + h;
    const double up = (net.forward(x).array() * r.array()).sum();
    p(i) = keep - h;
    const double down = (net.forward(x).array() * r.array()).sum();
    p(i) = keep;
    g(i) = (up - down) / (2 * h);
  }
  return g;
}

MatrixXd fd_input(const EncoderNet& net, MatrixXd x, const MatrixXd& r, double h = 1e-5) {
  MatrixXd g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x(i);
    x(i) = keep + h;
    const double up = (net.forward(x).array() * r.array()).sum();
    x(i) = keep - h;
    const double down = (net.forward(x).array() * r.array()).sum();
    x(i) = keep;
    g(i) = (up - down) / (2 * h);
  }
  return g;
}

void check_gradients(const EncoderNet& net, std::uint64_t seed) {
  Rng rng(seed);
  const MatrixXd x = standard_normal(4, net.in_dim(), rng);
  const MatrixXd r = standard_normal(4, net.out_dim(), rng);
  ForwardCache cache;
  net.forward(x, &cache);
  const GradientSet g = net.backward(cache, r);
  REQUIRE(g.params.size() == net.parameters().size());
  for (std::size_t t = 0; t < g.params.size(); ++t) {
    CAPTURE(t);
    CHECK(rel_err(g.params[t], fd_param(net, static_cast<int>(t), x, r)) <= 1e-4);
  }
  CHECK(rel_err(g.input, fd_input(net, x, r)) <= 1e-4);
}

EncoderNet random_net(int in, int out, int layers, int width, bool sigmoid, std::uint64_t seed) {
  EncoderParams p;
  p.n_layers = layers;
  p.hidden_width = width;
  p.sigmoid_output = sigmoid;
  EncoderNet net(in, out, p, seed);
  // Non-zero biases so that every bias path is exercised.
  Rng rng(seed + 1);
  for (int l = 0; l < net.n_layers(); ++l) net.layer(l).bias = 0.1 * standard_normal(net.layer(l).bias.rows(), 1, rng);
  return net;
}

GradientSet grads_with_norm(double norm) {
  GradientSet g;
  g.params = {MatrixXd::Constant(2, 2, 0.0), MatrixXd::Constant(1, 1, 0.0)};
  g.params[0](0, 0) = 0.6 * norm;
  g.params[1](0, 0) = 0.8 * norm;
  return g;
}

}  // namespace

TEST_CASE("default architecture") {
  const EncoderNet net(15, 5, EncoderParams{}, 1);
  CHECK(net.n_layers() == 7);
  CHECK(net.in_dim() == 15);
  CHECK(net.out_dim() == 5);
  CHECK(net.layer(0).weight.rows() == 150);
  CHECK(net.layer(6).activation == Activation::none);
  CHECK(net.layer(3).activation == Activation::leaky_relu);
  CHECK(net.parameter_count() == 15 * 150 + 150 + 5 * (150 * 150 + 150) + 150 * 5 + 5);
}

TEST_CASE("zero network outputs zeros") {
  EncoderNet net(3, 2, EncoderParams{}, 1);
  for (auto* p : net.parameters()) p->setZero();
  Rng rng(2);
  CHECK(net.forward(standard_normal(6, 3, rng)).isZero(0.0));
}

TEST_CASE("single linear layer matches x W^T + b") {
  Rng rng(3);
  EncoderNet::Layer L{standard_normal(2, 3, rng), standard_normal(2, 1, rng), Activation::none};
  const EncoderNet net({L}, 0.2);
  const MatrixXd x = standard_normal(4, 3, rng);
  for (Eigen::Index i = 0; i < 4; ++i)
    for (Eigen::Index o = 0; o < 2; ++o) {
      double acc = L.bias(o, 0);
      for (Eigen::Index k = 0; k < 3; ++k) acc += x(i, k) * L.weight(o, k);
      CHECK(net.forward(x)(i, o) == doctest::Approx(acc).epsilon(1e-14));
    }

  // loss = sum of outputs: dW = column sums of x, one copy per output row.
  ForwardCache cache;
  net.forward(x, &cache);
  const GradientSet g = net.backward(cache, MatrixXd::Ones(4, 2));
  for (Eigen::Index o = 0; o < 2; ++o)
    for (Eigen::Index k = 0; k < 3; ++k) CHECK(g.params[0](o, k) == doctest::Approx(x.col(k).sum()));
  CHECK((g.params[1].array() == 4.0).all());
}

TEST_CASE("backward matches finite differences") {
  SUBCASE("7 layers") { check_gradients(random_net(3, 2, 7, 6, false, 10), 11); }
  SUBCASE("sigmoid output") { check_gradients(random_net(4, 3, 3, 5, true, 12), 13); }
  SUBCASE("single layer") { check_gradients(random_net(2, 2, 1, 0, false, 14), 15); }
}

TEST_CASE("zero output gradient gives zero parameter gradients") {
  const EncoderNet net = random_net(3, 2, 4, 5, false, 1);
  Rng rng(2);
  ForwardCache cache;
  net.forward(standard_normal(5, 3, rng), &cache);
  const GradientSet g = net.backward(cache, MatrixXd::Zero(5, 2));
  for (const auto& p : g.params) CHECK(p.isZero(0.0));
}

TEST_CASE("forward and backward errors") {
  const EncoderNet net = random_net(3, 2, 2, 4, false, 1);
  CHECK_THROWS_AS(net.forward(MatrixXd::Zero(2, 4)), ArgumentError);
  MatrixXd bad = MatrixXd::Zero(2, 3);
  bad(1, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(net.forward(bad), NumericalError);
  CHECK_THROWS_AS(net.backward(ForwardCache{}, MatrixXd::Zero(2, 2)), StateError);
  ForwardCache cache;
  net.forward(MatrixXd::Zero(2, 3), &cache);
  CHECK_THROWS_AS(net.backward(cache, MatrixXd::Zero(3, 2)), ArgumentError);
  CHECK_THROWS_AS(EncoderNet(0, 2, EncoderParams{}, 1), ArgumentError);
}

TEST_CASE("checkpoint round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "mmcl_test_nets";
  std::filesystem::create_directories(dir);
  const EncoderNet net = random_net(5, 3, 7, 8, true, 4);
  net.save(dir / "net.bin");
  const EncoderNet back = EncoderNet::load(dir / "net.bin");
  CHECK(back == net);
  Rng rng(5);
  const MatrixXd x = standard_normal(3, 5, rng);
  CHECK(back.forward(x) == net.forward(x));

  {
    std::ofstream junk(dir / "junk.bin", std::ios::binary);
    junk << "not a checkpoint";
  }
  CHECK_THROWS_AS(EncoderNet::load(dir / "junk.bin"), ConfigError);
  CHECK_THROWS_AS(EncoderNet::load(dir / "missing.bin"), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("global norm clipping") {
  GradientSet big = grads_with_norm(4.0);
  const MatrixXd dir0 = big.params[0];
  const GradientSet clipped = clip_global_norm(big, 2.0);
  const std::vector<GradientSet> one{clipped};
  CHECK(global_norm(one) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(clipped.params[0](0, 0) == doctest::Approx(dir0(0, 0) * 0.5));

  const GradientSet small = grads_with_norm(1.0);
  const GradientSet same = clip_global_norm(small, 2.0);
  CHECK(same.params[0] == small.params[0]);
  CHECK(same.params[1] == small.params[1]);

  Rng rng(8);
  for (int t = 0; t < 20; ++t) {
    std::vector<GradientSet> gs(2);
    const double s = 0.1 + t * 0.3;
    for (auto& g : gs) g.params = {s * standard_normal(3, 4, rng), s * standard_normal(4, 1, rng)};
    const double pre = global_norm(gs);
    double direct = 0.0;
    for (const auto& g : gs)
      for (const auto& p : g.params) direct += p.squaredNorm();
    CHECK(pre == doctest::Approx(std::sqrt(direct)).epsilon(1e-12));
    CHECK(clip_global_norm(gs, 2.0) == doctest::Approx(pre));
    CHECK(std::abs(global_norm(gs) - std::min(pre, 2.0)) <= 1e-12);
    // Idempotence.
    const std::vector<GradientSet> again = gs;
    clip_global_norm(gs, 2.0);
    for (std::size_t i = 0; i < gs.size(); ++i)
      for (std::size_t k = 0; k < gs[i].params.size(); ++k)
        CHECK((gs[i].params[k] - again[i].params[k]).cwiseAbs().maxCoeff() <= 1e-15);
  }

  GradientSet nan = grads_with_norm(1.0);
  nan.params[1](0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(clip_global_norm(nan, 2.0), NumericalError);
  CHECK_THROWS_AS(clip_global_norm(grads_with_norm(1.0), 0.0), ArgumentError);
}

TEST_CASE("Adam follows the bias-corrected update") {
  AdamParams hp;
  hp.lr = 0.01;
  MatrixXd w(2, 2);
  w << 1.0, -2.0, 0.5, 3.0;
  std::vector<MatrixXd*> params{&w};
  AdamState adam(hp);
  CHECK_THROWS_AS(adam.step(params, std::vector<MatrixXd>{MatrixXd::Zero(2, 2)}), StateError);
  adam.init(std::vector<const MatrixXd*>{&w});

  MatrixXd m = MatrixXd::Zero(2, 2), v = MatrixXd::Zero(2, 2), expect = w;
  Rng rng(3);
  for (int t = 1; t <= 5; ++t) {
    const MatrixXd g = standard_normal(2, 2, rng);
    adam.step(params, std::vector<MatrixXd>{g});
    for (Eigen::Index i = 0; i < 4; ++i) {
      m(i) = 0.9 * m(i) + 0.1 * g(i);
      v(i) = 0.999 * v(i) + 0.001 * g(i) * g(i);
      const double mh = m(i) / (1 - std::pow(0.9, t));
      const double vh = v(i) / (1 - std::pow(0.999, t));
      expect(i) -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    }
    CHECK((w - expect).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(adam.step_count() == t);
  }
}

TEST_CASE("first Adam step moves every entry by lr against the gradient sign") {
  MatrixXd w = MatrixXd::Zero(1, 3);
  std::vector<MatrixXd*> params{&w};
  AdamState adam(AdamParams{});
  adam.init(std::vector<const MatrixXd*>{&w});
  MatrixXd g(1, 3);
  g << 0.5, -3.0, 20.0;
  adam.step(params, std::vector<MatrixXd>{g});
  CHECK(w(0, 0) == doctest::Approx(-1e-4).epsilon(1e-6));
  CHECK(w(0, 1) == doctest::Approx(1e-4).epsilon(1e-6));
  CHECK(w(0, 2) == doctest::Approx(-1e-4).epsilon(1e-6));
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  EncoderNet net = random_net(3, 2, 3, 4, false, 6);
  const EncoderNet before = net;
  AdamParams hp;
  hp.lr = 0.0;
  AdamState adam(hp);
  auto params = net.parameters();
  adam.init(std::vector<const MatrixXd*>(params.begin(), params.end()));
  Rng rng(7);
  ForwardCache cache;
  net.forward(standard_normal(5, 3, rng), &cache);
  const GradientSet g = net.backward(cache, standard_normal(5, 2, rng));
  adam.step(params, g.params);
  CHECK(net == before);
}
