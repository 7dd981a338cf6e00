#include "mmcl/generative.hpp"

#include "mmcl/errors.hpp"

namespace mmcl {

GenerativeModel::GenerativeModel(LatentSpec spec, InvertibleMixer mixer1, InvertibleMixer mixer2, std::string id)
    : spec_(std::move(spec)), mixer1_(std::move(mixer1)), mixer2_(std::move(mixer2)), id_(std::move(id)) {
  spec_.validate();
  if (mixer1_.dim() != spec_.dim1())
    throw ConfigError("mixer 1 has dimension " + std::to_string(mixer1_.dim()) + ", spec needs " +
                      std::to_string(spec_.dim1()));
  if (mixer2_.dim() != spec_.dim2())
    throw ConfigError("mixer 2 has dimension " + std::to_string(mixer2_.dim()) + ", spec needs " +
                      std::to_string(spec_.dim2()));
}

PairedBatch GenerativeModel::observe(LatentBatch latents) const {
  PairedBatch b;
  b.x1 = mixer1_.apply(latents.z1());
  b.x2 = mixer2_.apply(latents.z2());
  b.latents = std::move(latents);
  b.spec_id = id_;
  return b;
}

PairedBatch GenerativeModel::sample(Eigen::Index n, std::uint64_t seed) const {
  return observe(sample_pairs(spec_, n, seed));
}

void GenerativeModel::check_linked(const PairedBatch& batch) const {
  if (batch.spec_id != id_)
    throw ConfigError("batch was generated by '" + batch.spec_id + "', not by '" + id_ + "'");
  const auto n = batch.latents.size();
  if (batch.x1.rows() != n || batch.x2.rows() != n || batch.x1.cols() != spec_.dim1() ||
      batch.x2.cols() != spec_.dim2())
    throw ConfigError("batch shape does not match the generative model");
}

}  // namespace mmcl
