#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace mmcl {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; used to derive non-overlapping child seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Child seed for stream `stream` of `seed`. Distinct (seed, stream) pairs
// give unrelated generators, so every consumer owns its own RNG.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return mix64(mix64(seed) ^ mix64(stream + 0x632be59bd9b4e019ULL));
}

// Named streams.
enum class Stream : std::uint64_t {
  causal = 1,
  covariance = 2,
  mixer1 = 3,
  mixer2 = 4,
  encoder1 = 5,
  encoder2 = 6,
  train_data = 7,
  holdout = 8,
  intervention = 9,
  validation = 10,
  classifier = 11,
};

inline std::uint64_t derive_seed(std::uint64_t seed, Stream s) {
  return derive_seed(seed, static_cast<std::uint64_t>(s));
}

inline Eigen::MatrixXd standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  // Row-major fill order so results do not depend on Eigen's storage order.
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = n01(rng);
  return m;
}

}  // namespace mmcl
