#pragma once

#include <cstdint>
#include <string>

#include <Eigen/Dense>

#include "mmcl/latent_model.hpp"
#include "mmcl/mixing.hpp"

namespace mmcl {

// Latent pairs together with their observations x_i = f_i(z_i).
struct PairedBatch {
  LatentBatch latents;
  Eigen::MatrixXd x1;
  Eigen::MatrixXd x2;
  std::string spec_id;
};

// A latent spec bound to its two ground-truth mixers.
class GenerativeModel {
 public:
  // Throws ConfigError when mixer dimensions do not match the spec.
  GenerativeModel(LatentSpec spec, InvertibleMixer mixer1, InvertibleMixer mixer2, std::string id);

  const LatentSpec& spec() const { return spec_; }
  const InvertibleMixer& mixer1() const { return mixer1_; }
  const InvertibleMixer& mixer2() const { return mixer2_; }
  const std::string& id() const { return id_; }

  PairedBatch observe(LatentBatch latents) const;
  PairedBatch sample(Eigen::Index n, std::uint64_t seed) const;

  // Throws ConfigError unless the batch was produced by this model.
  void check_linked(const PairedBatch& batch) const;

 private:
  LatentSpec spec_;
  InvertibleMixer mixer1_;
  InvertibleMixer mixer2_;
  std::string id_;
};

}  // namespace mmcl
