#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace mmcl {

struct MixerParams {
  int n_layers = 3;
  double cond_ratio_threshold = 1e-3;  // minimum sigma_min / sigma_max per layer
  double alpha = 0.2;                  // LeakyReLU negative slope
  int max_draws_per_layer = 10000;
};

// Ground-truth mixing function x = f(z): a stack of square linear maps with
// LeakyReLU between them and no activation after the last layer. Immutable
// once built.
class InvertibleMixer {
 public:
  // Weights act on column vectors: h <- W h. Throws ConfigError unless all
  // weights are square of equal size and alpha > 0.
  InvertibleMixer(std::vector<Eigen::MatrixXd> weights, double alpha, double cond_ratio_threshold);

  int dim() const { return dim_; }
  int n_layers() const { return static_cast<int>(weights_.size()); }
  double alpha() const { return alpha_; }
  double cond_ratio_threshold() const { return threshold_; }
  const Eigen::MatrixXd& weight(int layer) const { return weights_[static_cast<std::size_t>(layer)]; }
  // sigma_min / sigma_max of each layer.
  const std::vector<double>& cond_ratios() const { return ratios_; }

  // Rows of z are samples.
  Eigen::MatrixXd apply(const Eigen::MatrixXd& z) const;
  // Throws NumericalError if a layer violates the conditioning threshold.
  Eigen::MatrixXd invert(const Eigen::MatrixXd& x) const;

  // CSV dump: a header line, then one line per weight row as
  // `layer,row,w_0,...,w_{d-1}`.
  void write_csv(std::ostream& os) const;
  static InvertibleMixer read_csv(std::istream& is);
  void save(const std::filesystem::path& path) const;
  static InvertibleMixer load(const std::filesystem::path& path);

  bool operator==(const InvertibleMixer& other) const;

 private:
  int dim_;
  double alpha_;
  double threshold_;
  std::vector<Eigen::MatrixXd> weights_;
  std::vector<Eigen::PartialPivLU<Eigen::MatrixXd>> lu_;
  std::vector<double> ratios_;
};

double singular_value_ratio(const Eigen::MatrixXd& m);

// Rejection-samples each layer from iid N(0,1) entries until its singular
// value ratio reaches the threshold.
InvertibleMixer sample_mixer(int d, const MixerParams& params, std::uint64_t seed);

// File name for a mixer dump keyed by experiment and modality.
std::filesystem::path mixer_path(const std::filesystem::path& dir, const std::string& experiment_id,
                                 int modality);

}  // namespace mmcl
