#pragma once

// Fixed-topology MLP encoders with hand-written reverse mode, global-norm
// gradient clipping and Adam.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace mmcl {

enum class Activation : std::uint8_t { none = 0, leaky_relu = 1, sigmoid = 2 };

struct EncoderParams {
  int n_layers = 7;
  int hidden_width = 0;  // 0: 10 * in_dim
  double alpha = 0.2;    // LeakyReLU slope of hidden layers
  bool sigmoid_output = false;
};

// Intermediates recorded by a training forward pass.
struct ForwardCache {
  std::vector<Eigen::MatrixXd> inputs;  // input of each layer
  std::vector<Eigen::MatrixXd> pre;     // pre-activation of each layer
  bool empty() const { return inputs.empty(); }
};

// Gradients, one tensor per parameter in EncoderNet::parameters() order,
// plus the gradient with respect to the network input.
struct GradientSet {
  std::vector<Eigen::MatrixXd> params;
  Eigen::MatrixXd input;
};

class EncoderNet {
 public:
  struct Layer {
    Eigen::MatrixXd weight;  // out x in
    Eigen::MatrixXd bias;    // out x 1
    Activation activation;
  };

  EncoderNet() = default;
  // Kaiming fan-in initialization, zero biases.
  EncoderNet(int in_dim, int out_dim, const EncoderParams& params, std::uint64_t seed);
  // Explicit layers; dimensions must chain.
  EncoderNet(std::vector<Layer> layers, double alpha);

  int in_dim() const;
  int out_dim() const;
  int n_layers() const { return static_cast<int>(layers_.size()); }
  double alpha() const { return alpha_; }
  Eigen::Index parameter_count() const;
  const Layer& layer(int l) const { return layers_[static_cast<std::size_t>(l)]; }
  Layer& layer(int l) { return layers_[static_cast<std::size_t>(l)]; }

  // Flat view of the trainable tensors: W_0, b_0, W_1, b_1, ...
  std::vector<Eigen::MatrixXd*> parameters();
  std::vector<const Eigen::MatrixXd*> parameters() const;
  bool all_finite() const;

  // Rows of x are samples; returns one encoding per row. Records
  // intermediates into `cache` when given.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, ForwardCache* cache = nullptr) const;
  // Throws StateError when the cache is empty or does not match output_grad.
  GradientSet backward(const ForwardCache& cache, const Eigen::MatrixXd& output_grad) const;

  // Versioned little-endian binary checkpoint.
  void save(const std::filesystem::path& path) const;
  static EncoderNet load(const std::filesystem::path& path);

  bool operator==(const EncoderNet& other) const;

 private:
  void check_chain() const;

  std::vector<Layer> layers_;
  double alpha_ = 0.2;
};

double global_norm(std::span<const GradientSet> grads);

// Scales all parameter gradients by max_norm / g when the joint 2-norm g
// exceeds max_norm. Returns g. Throws NumericalError on non-finite input.
double clip_global_norm(std::span<GradientSet> grads, double max_norm);
GradientSet clip_global_norm(GradientSet grads, double max_norm);

struct AdamParams {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(AdamParams params) : params_(params) {}

  // Allocates zeroed moment buffers shaped like `shapes`.
  void init(std::span<const Eigen::MatrixXd* const> shapes);
  bool initialized() const { return !m_.empty(); }
  long step_count() const { return t_; }
  const AdamParams& params() const { return params_; }
  void set_lr(double lr) { params_.lr = lr; }

  // One bias-corrected Adam update, in place.
  void step(std::span<Eigen::MatrixXd* const> params, std::span<const Eigen::MatrixXd> grads);

 private:
  AdamParams params_;
  std::vector<Eigen::MatrixXd> m_;
  std::vector<Eigen::MatrixXd> v_;
  long t_ = 0;
};

}  // namespace mmcl
