#include "mmcl/latent_model.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>

#include "mmcl/errors.hpp"

namespace mmcl {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;

void check_spd(const MatrixXd& m, int n, const char* name) {
  if (m.rows() != n || m.cols() != n)
    throw ConfigError(std::string(name) + ": expected " + std::to_string(n) + "x" +
                      std::to_string(n) + " matrix");
  if (n == 0) return;
  if (!m.allFinite()) throw ConfigError(std::string(name) + ": non-finite entries");
  if (!m.isApprox(m.transpose(), 1e-12)) throw ConfigError(std::string(name) + ": not symmetric");
  Eigen::LLT<MatrixXd> llt(m);
  if (llt.info() != Eigen::Success)
    throw ConfigError(std::string(name) + ": not positive definite (Cholesky failed)");
}

MatrixXd cholesky_factor(const MatrixXd& cov) {
  if (cov.rows() == 0) return cov;
  return Eigen::LLT<MatrixXd>(cov).matrixL();
}

// Rows ~ N(0, cov), drawn row-major from rng.
MatrixXd gaussian_rows(const MatrixXd& cov, Index n, Rng& rng) {
  const Index d = cov.rows();
  if (d == 0) return MatrixXd(n, 0);
  return standard_normal(n, d, rng) * cholesky_factor(cov).transpose();
}

MatrixXd hcat(std::initializer_list<const MatrixXd*> parts) {
  Index rows = (*parts.begin())->rows();
  Index cols = 0;
  for (auto* p : parts) cols += p->cols();
  MatrixXd out(rows, cols);
  Index at = 0;
  for (auto* p : parts) {
    out.middleCols(at, p->cols()) = *p;
    at += p->cols();
  }
  return out;
}

// Categorical block for a discrete latent, embedded for mixing.
MatrixXd categorical_block(Index n, int dims, int k, Rng& rng) {
  MatrixXd shape(n, dims);
  return embed_classes(discretize_block(shape, k, rng()), k);
}

struct StyleChange {
  MatrixXd style;
  Mask changed;
};

// Perturb each style coordinate with probability pi. Continuous styles get
// additive N(0, cov_eps) noise; categorical styles move to a different class.
StyleChange perturb_style(const LatentSpec& spec, const MatrixXd& s, Rng& rng) {
  const Index n = s.rows();
  const int ns = spec.n_s;
  StyleChange out{s, Mask::Constant(n, ns, false)};
  if (ns == 0) return out;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (Index i = 0; i < n; ++i)
    for (int j = 0; j < ns; ++j) out.changed(i, j) = u01(rng) < spec.perturb_prob;

  if (auto k = spec.discrete_classes(BlockKind::style)) {
    std::uniform_int_distribution<int> shift(1, *k - 1);
    const double half = (*k - 1) / 2.0;
    for (Index i = 0; i < n; ++i)
      for (int j = 0; j < ns; ++j) {
        const int step = shift(rng);
        if (!out.changed(i, j)) continue;
        const int cls = static_cast<int>(std::lround(s(i, j) + half));
        out.style(i, j) = ((cls + step) % *k) - half;
      }
    return out;
  }

  const MatrixXd eps = gaussian_rows(spec.cov_eps, n, rng);
  for (Index i = 0; i < n; ++i)
    for (int j = 0; j < ns; ++j)
      if (out.changed(i, j)) out.style(i, j) += eps(i, j);
  return out;
}

struct BaseDraw {
  MatrixXd c, s, m1, m2;
};

BaseDraw draw_base(const LatentSpec& spec, Index n, Rng& rng) {
  BaseDraw b;
  auto block = [&](BlockKind kind, const MatrixXd& cov) {
    if (auto k = spec.discrete_classes(kind)) return categorical_block(n, spec.block_size(kind), *k, rng);
    return gaussian_rows(cov, n, rng);
  };
  b.c = block(BlockKind::content, spec.cov_c);
  b.m1 = block(BlockKind::modality1, spec.cov_m1);
  b.m2 = block(BlockKind::modality2, spec.cov_m2);
  b.s = block(BlockKind::style, spec.cov_s);
  if (spec.has_causal_link() && spec.n_s > 0) {
    b.s += b.c * spec.causal_B.transpose();
    b.s.rowwise() += spec.causal_a.transpose();
  }
  return b;
}

void check_count(Index n) {
  if (n < 1) throw ArgumentError("sample count must be >= 1");
}

}  // namespace

std::string_view to_string(BlockKind b) {
  switch (b) {
    case BlockKind::content: return "content";
    case BlockKind::style: return "style";
    case BlockKind::modality1: return "modality1";
    case BlockKind::modality2: return "modality2";
  }
  return "?";
}

int LatentSpec::block_size(BlockKind b) const {
  switch (b) {
    case BlockKind::content: return n_c;
    case BlockKind::style: return n_s;
    case BlockKind::modality1: return n_m1;
    case BlockKind::modality2: return n_m2;
  }
  return 0;
}

std::optional<int> LatentSpec::discrete_classes(BlockKind b) const {
  auto it = discrete_blocks.find(b);
  if (it == discrete_blocks.end()) return std::nullopt;
  return it->second;
}

bool LatentSpec::has_causal_link() const {
  return (causal_a.size() > 0 && !causal_a.isZero(0.0)) ||
         (causal_B.size() > 0 && !causal_B.isZero(0.0));
}

void LatentSpec::validate() const {
  if (n_c < 1) throw ConfigError("n_c must be >= 1");
  if (n_s < 0 || n_m1 < 0 || n_m2 < 0) throw ConfigError("block sizes must be non-negative");
  check_spd(cov_c, n_c, "cov_c");
  check_spd(cov_s, n_s, "cov_s");
  check_spd(cov_m1, n_m1, "cov_m1");
  check_spd(cov_m2, n_m2, "cov_m2");
  check_spd(cov_eps, n_s, "cov_eps");
  if (!(perturb_prob >= 0.0 && perturb_prob <= 1.0))
    throw ConfigError("perturb_prob must lie in [0, 1]");
  if (causal_a.size() != n_s) throw ConfigError("causal_a must have n_s entries");
  if (causal_B.rows() != n_s || causal_B.cols() != n_c)
    throw ConfigError("causal_B must be n_s x n_c");
  for (const auto& [block, k] : discrete_blocks) {
    if (k < 2) throw ConfigError("discrete block " + std::string(to_string(block)) + " needs k >= 2");
    if (block_size(block) == 0)
      throw ConfigError("discrete block " + std::string(to_string(block)) + " has no dimensions");
  }
  if (discrete_classes(BlockKind::style) && has_causal_link())
    throw ConfigError("a causal link into a discrete style block is not supported");
}

LatentSpec LatentSpec::independent(int n_c, int n_s, int n_m1, int n_m2, double perturb_prob) {
  LatentSpec s;
  s.n_c = n_c;
  s.n_s = n_s;
  s.n_m1 = n_m1;
  s.n_m2 = n_m2;
  s.cov_c = MatrixXd::Identity(n_c, n_c);
  s.cov_s = MatrixXd::Identity(n_s, n_s);
  s.cov_m1 = MatrixXd::Identity(n_m1, n_m1);
  s.cov_m2 = MatrixXd::Identity(n_m2, n_m2);
  s.cov_eps = MatrixXd::Identity(n_s, n_s);
  s.causal_a = Eigen::VectorXd::Zero(n_s);
  s.causal_B = MatrixXd::Zero(n_s, n_c);
  s.perturb_prob = perturb_prob;
  return s;
}

Eigen::MatrixXd random_correlation(int n, Rng& rng) {
  if (n == 0) return MatrixXd(0, 0);
  const MatrixXd g = standard_normal(n, n, rng);
  MatrixXd gram = g * g.transpose();
  const Eigen::VectorXd inv_sd = gram.diagonal().cwiseSqrt().cwiseInverse();
  MatrixXd corr = inv_sd.asDiagonal() * gram * inv_sd.asDiagonal();
  corr = 0.5 * (corr + corr.transpose());
  corr.diagonal().setOnes();
  return corr;
}

LatentSpec build_latent_spec(const GenerativeSettings& g, std::uint64_t seed) {
  LatentSpec spec = LatentSpec::independent(g.n_c, g.n_s, g.n_m1, g.n_m2, g.perturb_prob);
  spec.cov_eps = g.eps_sigma * g.eps_sigma * MatrixXd::Identity(g.n_s, g.n_s);
  spec.mode = g.mode;
  spec.discrete_blocks = g.discrete_blocks;
  if (g.statistical) {
    Rng rng(derive_seed(seed, Stream::covariance));
    spec.cov_c = random_correlation(g.n_c, rng);
    spec.cov_s = random_correlation(g.n_s, rng);
  }
  if (g.causal) {
    Rng rng(derive_seed(seed, Stream::causal));
    spec.causal_a = standard_normal(g.n_s, 1, rng).col(0);
    spec.causal_B = standard_normal(g.n_s, g.n_c, rng);
  }
  spec.validate();
  return spec;
}

Eigen::MatrixXd LatentBatch::z1() const { return hcat({&content, &style1, &modality1}); }
Eigen::MatrixXd LatentBatch::z2() const { return hcat({&content, &style2, &modality2}); }

LatentPair LatentBatch::pair(Eigen::Index i) const {
  LatentPair p;
  p.z1.resize(content.cols() + style1.cols() + modality1.cols());
  p.z1 << content.row(i).transpose(), style1.row(i).transpose(), modality1.row(i).transpose();
  p.z2.resize(content.cols() + style2.cols() + modality2.cols());
  p.z2 << content.row(i).transpose(), style2.row(i).transpose(), modality2.row(i).transpose();
  for (Index j = 0; j < changed2.cols(); ++j)
    if (changed2(i, j)) p.changed.push_back(static_cast<int>(j));
  for (Index j = 0; j < changed1.cols(); ++j)
    if (changed1(i, j)) p.changed1.push_back(static_cast<int>(j));
  return p;
}

void LatentBatch::write_csv(std::ostream& os) const {
  const bool symmetric = mode == SamplingMode::symmetric;
  std::vector<std::pair<std::string, const MatrixXd*>> blocks{{"c_", &content}, {"s_", &style}};
  if (symmetric) blocks.emplace_back("s_tilde1_", &style1);
  blocks.emplace_back("s_tilde_", &style2);
  blocks.emplace_back("m1_", &modality1);
  blocks.emplace_back("m2_", &modality2);

  bool first = true;
  for (const auto& [prefix, m] : blocks)
    for (Index j = 0; j < m->cols(); ++j) {
      os << (first ? "" : ",") << prefix << j;
      first = false;
    }
  os << '\n';
  const auto old_precision = os.precision(std::numeric_limits<double>::max_digits10);
  for (Index i = 0; i < size(); ++i) {
    first = true;
    for (const auto& [prefix, m] : blocks)
      for (Index j = 0; j < m->cols(); ++j) {
        os << (first ? "" : ",") << (*m)(i, j);
        first = false;
      }
    os << '\n';
  }
  os.precision(old_precision);
}

LatentBatch sample_latents(const LatentSpec& spec, Eigen::Index n, std::uint64_t seed) {
  check_count(n);
  spec.validate();
  Rng rng(seed);
  BaseDraw base = draw_base(spec, n, rng);
  StyleChange change = perturb_style(spec, base.s, rng);

  LatentBatch out;
  out.content = std::move(base.c);
  out.style = base.s;
  out.style1 = std::move(base.s);
  out.style2 = std::move(change.style);
  out.modality1 = std::move(base.m1);
  out.modality2 = std::move(base.m2);
  out.changed1 = Mask::Constant(n, spec.n_s, false);
  out.changed2 = std::move(change.changed);
  return out;
}

LatentBatch sample_latents_symmetric(const LatentSpec& spec, Eigen::Index n, std::uint64_t seed) {
  check_count(n);
  spec.validate();
  if (spec.mode != SamplingMode::symmetric)
    throw ConfigError("sample_latents_symmetric requires a symmetric-mode spec");
  Rng rng(seed);
  BaseDraw base = draw_base(spec, n, rng);
  StyleChange side1 = perturb_style(spec, base.s, rng);
  StyleChange side2 = perturb_style(spec, base.s, rng);

  LatentBatch out;
  out.content = std::move(base.c);
  out.style = std::move(base.s);
  out.style1 = std::move(side1.style);
  out.style2 = std::move(side2.style);
  out.modality1 = std::move(base.m1);
  out.modality2 = std::move(base.m2);
  out.changed1 = std::move(side1.changed);
  out.changed2 = std::move(side2.changed);
  out.mode = SamplingMode::symmetric;
  return out;
}

LatentBatch sample_pairs(const LatentSpec& spec, Eigen::Index n, std::uint64_t seed) {
  return spec.mode == SamplingMode::symmetric ? sample_latents_symmetric(spec, n, seed)
                                              : sample_latents(spec, n, seed);
}

LatentBatch intervene_content(const LatentBatch& batch, std::uint64_t seed) {
  const Index n = batch.size();
  if (n == 0) throw ArgumentError("intervene_content: empty batch");
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  Rng rng(seed);
  for (Index i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<Index> pick(0, i);
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(pick(rng))]);
  }
  LatentBatch out = batch;
  for (Index i = 0; i < n; ++i) out.content.row(i) = batch.content.row(perm[static_cast<std::size_t>(i)]);
  return out;
}

Eigen::MatrixXi discretize_block(const Eigen::MatrixXd& values, int k, std::uint64_t seed) {
  if (k < 2) throw ArgumentError("discretize_block: k must be >= 2");
  Rng rng(seed);
  std::uniform_int_distribution<int> cls(0, k - 1);
  Eigen::MatrixXi out(values.rows(), values.cols());
  for (Index i = 0; i < out.rows(); ++i)
    for (Index j = 0; j < out.cols(); ++j) out(i, j) = cls(rng);
  return out;
}

Eigen::MatrixXd embed_classes(const Eigen::MatrixXi& classes, int k) {
  return classes.cast<double>().array() - (k - 1) / 2.0;
}

Eigen::MatrixXi recover_classes(const Eigen::MatrixXd& embedded, int k) {
  const double half = (k - 1) / 2.0;
  return embedded.unaryExpr([half](double v) { return static_cast<int>(std::lround(v + half)); });
}

}  // namespace mmcl
