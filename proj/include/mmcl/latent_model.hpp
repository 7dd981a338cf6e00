#pragma once

// Generative process for paired multimodal observations.
//
// A pair shares a content block c exactly, shares a style block s up to
// random per-dimension perturbations, and carries one modality-specific
// block per side:
//
//   c ~ N(0, Sc),  m_i ~ N(0, Sm_i),  s ~ N(a + B c, Ss)
//   z1 = (c, s, m1),  z2 = (c, s~, m2),  s~_j = s_j + eps_j  for j in A
//
// where every style dimension enters the change set A independently with
// probability perturb_prob.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "mmcl/rng.hpp"

namespace mmcl {

enum class BlockKind { content, style, modality1, modality2 };

std::string_view to_string(BlockKind b);

enum class SamplingMode {
  asymmetric,  // z2 perturbs the style of z1
  symmetric,   // both sides perturb a shared base style independently
};

using Mask = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct LatentSpec {
  int n_c = 5;
  int n_s = 5;
  int n_m1 = 5;
  int n_m2 = 5;
  Eigen::MatrixXd cov_c;
  Eigen::MatrixXd cov_s;
  Eigen::MatrixXd cov_m1;
  Eigen::MatrixXd cov_m2;
  Eigen::MatrixXd cov_eps;
  Eigen::VectorXd causal_a;  // n_s
  Eigen::MatrixXd causal_B;  // n_s x n_c
  double perturb_prob = 0.75;
  SamplingMode mode = SamplingMode::asymmetric;
  // Blocks drawn as uniform categorical codes instead of Gaussians.
  // modality1/modality2 entries are independent.
  std::map<BlockKind, int> discrete_blocks;

  int dim1() const { return n_c + n_s + n_m1; }
  int dim2() const { return n_c + n_s + n_m2; }
  int block_size(BlockKind b) const;
  std::optional<int> discrete_classes(BlockKind b) const;
  bool has_causal_link() const;

  // Throws ConfigError when an invariant is violated.
  void validate() const;

  // Identity covariances, no causal link.
  static LatentSpec independent(int n_c, int n_s, int n_m1, int n_m2, double perturb_prob);
};

// Knobs of the simulation grid; build_latent_spec turns them into a
// concrete LatentSpec with frozen random covariances and causal weights.
struct GenerativeSettings {
  int n_c = 5;
  int n_s = 5;
  int n_m1 = 5;
  int n_m2 = 5;
  double perturb_prob = 0.75;
  bool statistical = false;  // random correlation within content and style
  bool causal = false;       // a, B ~ N(0, 1)
  double eps_sigma = 1.0;
  SamplingMode mode = SamplingMode::asymmetric;
  std::map<BlockKind, int> discrete_blocks;
};

LatentSpec build_latent_spec(const GenerativeSettings& settings, std::uint64_t seed);

// GG^T for G with iid N(0,1) entries, rescaled to unit diagonal.
Eigen::MatrixXd random_correlation(int n, Rng& rng);

struct LatentPair {
  Eigen::VectorXd z1;
  Eigen::VectorXd z2;
  std::vector<int> changed;   // change set applied to side 2
  std::vector<int> changed1;  // symmetric mode only: change set of side 1
};

// Column-blocked storage of n pairs. `style` is the base draw s; `style1`
// and `style2` are what enters each side (style1 == style in asymmetric
// mode).
struct LatentBatch {
  Eigen::MatrixXd content;
  Eigen::MatrixXd style;
  Eigen::MatrixXd style1;
  Eigen::MatrixXd style2;
  Eigen::MatrixXd modality1;
  Eigen::MatrixXd modality2;
  Mask changed1;
  Mask changed2;
  SamplingMode mode = SamplingMode::asymmetric;

  Eigen::Index size() const { return content.rows(); }
  Eigen::MatrixXd z1() const;
  Eigen::MatrixXd z2() const;
  LatentPair pair(Eigen::Index i) const;

  // CSV with header c_*, s_*, s_tilde_*, m1_*, m2_* (plus s_tilde1_* before
  // s_tilde_* in symmetric mode).
  void write_csv(std::ostream& os) const;
};

LatentBatch sample_latents(const LatentSpec& spec, Eigen::Index n, std::uint64_t seed);
LatentBatch sample_latents_symmetric(const LatentSpec& spec, Eigen::Index n, std::uint64_t seed);
// Dispatches on spec.mode.
LatentBatch sample_pairs(const LatentSpec& spec, Eigen::Index n, std::uint64_t seed);

// Replaces content by a uniformly random row permutation of itself (one
// permutation shared by both sides). Style and modality blocks are kept.
LatentBatch intervene_content(const LatentBatch& batch, std::uint64_t seed);

// Uniform categorical draws in {0..k-1} with the shape of `values`.
Eigen::MatrixXi discretize_block(const Eigen::MatrixXd& values, int k, std::uint64_t seed);

// Centered real embedding of class codes: class - (k-1)/2.
Eigen::MatrixXd embed_classes(const Eigen::MatrixXi& classes, int k);
Eigen::MatrixXi recover_classes(const Eigen::MatrixXd& embedded, int k);

}  // namespace mmcl
