#include "mmcl/nets.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

#include "mmcl/errors.hpp"
#include "mmcl/rng.hpp"

namespace mmcl {

namespace {

using Eigen::MatrixXd;

MatrixXd activate(const MatrixXd& pre, Activation a, double alpha) {
  switch (a) {
    case Activation::none: return pre;
    case Activation::leaky_relu: return pre.unaryExpr([alpha](double v) { return v > 0.0 ? v : alpha * v; });
    case Activation::sigmoid: return pre.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
  }
  return pre;
}

// dL/dpre given dL/dout.
MatrixXd activation_backward(const MatrixXd& pre, MatrixXd grad, Activation a, double alpha) {
  switch (a) {
    case Activation::none: return grad;
    case Activation::leaky_relu:
      return grad.binaryExpr(pre, [alpha](double g, double v) { return v > 0.0 ? g : alpha * g; });
    case Activation::sigmoid:
      return grad.binaryExpr(pre, [](double g, double v) {
        const double s = 1.0 / (1.0 + std::exp(-v));
        return g * s * (1.0 - s);
      });
  }
  return grad;
}

constexpr char kMagic[8] = {'M', 'M', 'C', 'L', 'N', 'E', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian hosts");

template <class T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw ConfigError("checkpoint: unexpected end of file");
  return v;
}

void put_matrix(std::ostream& os, const MatrixXd& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) put(os, m(i, j));
}

void get_matrix(std::istream& is, MatrixXd& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = get<double>(is);
}

}  // namespace

EncoderNet::EncoderNet(int in_dim, int out_dim, const EncoderParams& params, std::uint64_t seed)
    : alpha_(params.alpha) {
  if (in_dim < 1 || out_dim < 1) throw ArgumentError("encoder dimensions must be >= 1");
  if (params.n_layers < 1) throw ArgumentError("encoder needs at least one layer");
  const int width = params.hidden_width > 0 ? params.hidden_width : 10 * in_dim;
  Rng rng(seed);
  int fan_in = in_dim;
  for (int l = 0; l < params.n_layers; ++l) {
    const bool last = l + 1 == params.n_layers;
    const int fan_out = last ? out_dim : width;
    // He initialization for LeakyReLU(alpha) inputs.
    const double gain = l == 0 ? 1.0 : std::sqrt(2.0 / (1.0 + params.alpha * params.alpha));
    const double scale = gain / std::sqrt(static_cast<double>(fan_in));
    Layer layer{standard_normal(fan_out, fan_in, rng) * scale, MatrixXd::Zero(fan_out, 1),
                last ? (params.sigmoid_output ? Activation::sigmoid : Activation::none) : Activation::leaky_relu};
    layers_.push_back(std::move(layer));
    fan_in = fan_out;
  }
}

EncoderNet::EncoderNet(std::vector<Layer> layers, double alpha) : layers_(std::move(layers)), alpha_(alpha) {
  check_chain();
}

void EncoderNet::check_chain() const {
  if (layers_.empty()) throw ArgumentError("encoder needs at least one layer");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& L = layers_[l];
    if (L.weight.rows() < 1 || L.weight.cols() < 1) throw ArgumentError("encoder layer with empty weight");
    if (L.bias.rows() != L.weight.rows() || L.bias.cols() != 1)
      throw ArgumentError("encoder bias must be out x 1");
    if (l > 0 && L.weight.cols() != layers_[l - 1].weight.rows())
      throw ArgumentError("encoder layer dimensions do not chain at layer " + std::to_string(l));
  }
}

int EncoderNet::in_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.front().weight.cols()); }
int EncoderNet::out_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.back().weight.rows()); }

Eigen::Index EncoderNet::parameter_count() const {
  Eigen::Index n = 0;
  for (const auto& L : layers_) n += L.weight.size() + L.bias.size();
  return n;
}

std::vector<Eigen::MatrixXd*> EncoderNet::parameters() {
  std::vector<MatrixXd*> out;
  for (auto& L : layers_) {
    out.push_back(&L.weight);
    out.push_back(&L.bias);
  }
  return out;
}

std::vector<const Eigen::MatrixXd*> EncoderNet::parameters() const {
  std::vector<const MatrixXd*> out;
  for (const auto& L : layers_) {
    out.push_back(&L.weight);
    out.push_back(&L.bias);
  }
  return out;
}

bool EncoderNet::all_finite() const {
  for (const auto& L : layers_)
    if (!L.weight.allFinite() || !L.bias.allFinite()) return false;
  return true;
}

Eigen::MatrixXd EncoderNet::forward(const Eigen::MatrixXd& x, ForwardCache* cache) const {
  if (layers_.empty()) throw StateError("forward on an empty encoder");
  if (x.cols() != in_dim())
    throw ArgumentError("encoder forward: expected " + std::to_string(in_dim()) + " columns, got " +
                        std::to_string(x.cols()));
  if (!x.allFinite()) throw NumericalError("encoder forward: non-finite input");
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  MatrixXd h = x;
  for (const auto& L : layers_) {
    MatrixXd pre = h * L.weight.transpose();
    pre.rowwise() += L.bias.col(0).transpose();
    MatrixXd out = activate(pre, L.activation, alpha_);
    if (cache) {
      cache->inputs.push_back(std::move(h));
      cache->pre.push_back(std::move(pre));
    }
    h = std::move(out);
  }
  return h;
}

GradientSet EncoderNet::backward(const ForwardCache& cache, const Eigen::MatrixXd& output_grad) const {
  if (cache.empty()) throw StateError("backward called without a forward cache");
  if (cache.inputs.size() != layers_.size())
    throw StateError("forward cache does not belong to this network");
  if (output_grad.rows() != cache.inputs.front().rows() || output_grad.cols() != out_dim())
    throw ArgumentError("backward: output gradient shape does not match the cached batch");

  GradientSet g;
  g.params.resize(2 * layers_.size());
  MatrixXd grad = output_grad;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const auto& L = layers_[l];
    const MatrixXd grad_pre = activation_backward(cache.pre[l], std::move(grad), L.activation, alpha_);
    g.params[2 * l] = grad_pre.transpose() * cache.inputs[l];
    g.params[2 * l + 1] = grad_pre.colwise().sum().transpose();
    grad = grad_pre * L.weight;
  }
  g.input = std::move(grad);
  return g;
}

void EncoderNet::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  put(out, kVersion);
  put(out, static_cast<std::uint32_t>(layers_.size()));
  put(out, alpha_);
  for (const auto& L : layers_) {
    put(out, static_cast<std::uint32_t>(L.weight.cols()));
    put(out, static_cast<std::uint32_t>(L.weight.rows()));
    put(out, static_cast<std::uint8_t>(L.activation));
  }
  for (const auto& L : layers_) {
    put_matrix(out, L.weight);
    put_matrix(out, L.bias);
  }
  if (!out) throw ConfigError("failed writing checkpoint " + path.string());
}

EncoderNet EncoderNet::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read checkpoint " + path.string());
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw ConfigError("checkpoint: bad magic");
  const auto version = get<std::uint32_t>(in);
  if (version != kVersion) throw ConfigError("checkpoint: unsupported version " + std::to_string(version));
  const auto n = get<std::uint32_t>(in);
  const auto alpha = get<double>(in);
  std::vector<Layer> layers;
  for (std::uint32_t l = 0; l < n; ++l) {
    const auto in_dim = get<std::uint32_t>(in);
    const auto out_dim = get<std::uint32_t>(in);
    const auto act = get<std::uint8_t>(in);
    if (act > 2) throw ConfigError("checkpoint: unknown activation");
    layers.push_back({MatrixXd(out_dim, in_dim), MatrixXd(out_dim, 1), static_cast<Activation>(act)});
  }
  for (auto& L : layers) {
    get_matrix(in, L.weight);
    get_matrix(in, L.bias);
  }
  return EncoderNet(std::move(layers), alpha);
}

bool EncoderNet::operator==(const EncoderNet& other) const {
  if (alpha_ != other.alpha_ || layers_.size() != other.layers_.size()) return false;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& a = layers_[l];
    const auto& b = other.layers_[l];
    if (a.activation != b.activation || a.weight != b.weight || a.bias != b.bias) return false;
  }
  return true;
}

double global_norm(std::span<const GradientSet> grads) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (const auto& t : g.params) sq += t.squaredNorm();
  return std::sqrt(sq);
}

double clip_global_norm(std::span<GradientSet> grads, double max_norm) {
  if (!(max_norm > 0.0)) throw ArgumentError("clip_global_norm: max_norm must be > 0");
  const double norm = global_norm(grads);
  if (!std::isfinite(norm)) throw NumericalError("clip_global_norm: non-finite gradients");
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& g : grads)
      for (auto& t : g.params) t *= scale;
  }
  return norm;
}

GradientSet clip_global_norm(GradientSet grads, double max_norm) {
  clip_global_norm(std::span<GradientSet>(&grads, 1), max_norm);
  return grads;
}

void AdamState::init(std::span<const Eigen::MatrixXd* const> shapes) {
  m_.clear();
  v_.clear();
  for (const auto* p : shapes) {
    m_.push_back(MatrixXd::Zero(p->rows(), p->cols()));
    v_.push_back(MatrixXd::Zero(p->rows(), p->cols()));
  }
  t_ = 0;
}

void AdamState::step(std::span<Eigen::MatrixXd* const> params, std::span<const Eigen::MatrixXd> grads) {
  if (!initialized()) throw StateError("Adam step on an uninitialized optimizer");
  if (params.size() != m_.size() || grads.size() != m_.size())
    throw ArgumentError("Adam step: parameter count does not match optimizer state");
  ++t_;
  const double b1 = params_.beta1;
  const double b2 = params_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < m_.size(); ++i) {
    auto& p = *params[i];
    const auto& g = grads[i];
    if (g.rows() != p.rows() || g.cols() != p.cols() || m_[i].rows() != p.rows() || m_[i].cols() != p.cols())
      throw ArgumentError("Adam step: gradient shape mismatch at tensor " + std::to_string(i));
    m_[i] = b1 * m_[i] + (1.0 - b1) * g;
    v_[i] = b2 * v_[i] + (1.0 - b2) * g.cwiseAbs2();
    p.array() -= params_.lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + params_.eps);
  }
}

}  // namespace mmcl
