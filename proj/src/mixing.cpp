#include "mmcl/mixing.hpp"

#include <fstream>
#include <limits>
#include <sstream>
#include <string>

#include "mmcl/errors.hpp"
#include "mmcl/rng.hpp"

namespace mmcl {

namespace {

using Eigen::MatrixXd;

MatrixXd leaky(const MatrixXd& h, double alpha) {
  return h.unaryExpr([alpha](double v) { return v > 0.0 ? v : alpha * v; });
}

MatrixXd leaky_inverse(const MatrixXd& h, double alpha) {
  return h.unaryExpr([alpha](double v) { return v > 0.0 ? v : v / alpha; });
}

}  // namespace

double singular_value_ratio(const Eigen::MatrixXd& m) {
  Eigen::JacobiSVD<MatrixXd> svd(m);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0.0) return 0.0;
  return s(s.size() - 1) / s(0);
}

InvertibleMixer::InvertibleMixer(std::vector<Eigen::MatrixXd> weights, double alpha,
                                 double cond_ratio_threshold)
    : dim_(0), alpha_(alpha), threshold_(cond_ratio_threshold), weights_(std::move(weights)) {
  if (weights_.empty()) throw ConfigError("mixer needs at least one layer");
  if (!(alpha_ > 0.0)) throw ConfigError("mixer LeakyReLU slope must be > 0");
  dim_ = static_cast<int>(weights_.front().rows());
  for (const auto& w : weights_) {
    if (w.rows() != dim_ || w.cols() != dim_) throw ConfigError("mixer weights must be square d x d");
    if (!w.allFinite()) throw ConfigError("mixer weights must be finite");
    lu_.emplace_back(w);
    ratios_.push_back(singular_value_ratio(w));
  }
}

Eigen::MatrixXd InvertibleMixer::apply(const Eigen::MatrixXd& z) const {
  if (z.cols() != dim_)
    throw ArgumentError("mixer apply: expected " + std::to_string(dim_) + " columns, got " +
                        std::to_string(z.cols()));
  MatrixXd h = z;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    h = h * weights_[l].transpose();
    if (l + 1 < weights_.size()) h = leaky(h, alpha_);
  }
  return h;
}

Eigen::MatrixXd InvertibleMixer::invert(const Eigen::MatrixXd& x) const {
  if (x.cols() != dim_)
    throw ArgumentError("mixer invert: expected " + std::to_string(dim_) + " columns, got " +
                        std::to_string(x.cols()));
  MatrixXd h = x;
  for (std::size_t l = weights_.size(); l-- > 0;) {
    if (!(ratios_[l] >= threshold_) || ratios_[l] == 0.0)
      throw NumericalError("mixer invert: layer " + std::to_string(l) +
                           " is numerically singular (sigma ratio " + std::to_string(ratios_[l]) + ")");
    if (l + 1 < weights_.size()) h = leaky_inverse(h, alpha_);
    // Rows satisfy h_out = h_in W^T, so h_in^T = W^{-1} h_out^T.
    h = lu_[l].solve(h.transpose()).transpose();
  }
  return h;
}

void InvertibleMixer::write_csv(std::ostream& os) const {
  const auto old_precision = os.precision(std::numeric_limits<double>::max_digits10);
  os << "# mixer d=" << dim_ << " layers=" << weights_.size() << " alpha=" << alpha_
     << " threshold=" << threshold_ << '\n';
  for (std::size_t l = 0; l < weights_.size(); ++l)
    for (int i = 0; i < dim_; ++i) {
      os << l << ',' << i;
      for (int j = 0; j < dim_; ++j) os << ',' << weights_[l](i, j);
      os << '\n';
    }
  os.precision(old_precision);
}

InvertibleMixer InvertibleMixer::read_csv(std::istream& is) {
  std::string header;
  if (!std::getline(is, header) || header.rfind("# mixer ", 0) != 0)
    throw ConfigError("mixer csv: missing header");
  int d = 0;
  std::size_t layers = 0;
  double alpha = 0.0;
  double threshold = 0.0;
  if (std::sscanf(header.c_str(), "# mixer d=%d layers=%zu alpha=%lf threshold=%lf", &d, &layers, &alpha,
                  &threshold) != 4 ||
      d < 1 || layers < 1)
    throw ConfigError("mixer csv: malformed header '" + header + "'");
  std::vector<MatrixXd> weights(layers, MatrixXd::Zero(d, d));
  std::string line;
  std::size_t rows_read = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ls, cell, ',')) vals.push_back(std::stod(cell));
    if (vals.size() != static_cast<std::size_t>(d) + 2) throw ConfigError("mixer csv: bad row width");
    const auto l = static_cast<std::size_t>(vals[0]);
    const auto i = static_cast<int>(vals[1]);
    if (l >= layers || i < 0 || i >= d) throw ConfigError("mixer csv: row index out of range");
    for (int j = 0; j < d; ++j) weights[l](i, j) = vals[static_cast<std::size_t>(j) + 2];
    ++rows_read;
  }
  if (rows_read != layers * static_cast<std::size_t>(d)) throw ConfigError("mixer csv: truncated file");
  return InvertibleMixer(std::move(weights), alpha, threshold);
}

void InvertibleMixer::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write mixer file " + path.string());
  write_csv(out);
}

InvertibleMixer InvertibleMixer::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read mixer file " + path.string());
  return read_csv(in);
}

bool InvertibleMixer::operator==(const InvertibleMixer& other) const {
  if (dim_ != other.dim_ || alpha_ != other.alpha_ || threshold_ != other.threshold_ ||
      weights_.size() != other.weights_.size())
    return false;
  for (std::size_t l = 0; l < weights_.size(); ++l)
    if (weights_[l] != other.weights_[l]) return false;
  return true;
}

InvertibleMixer sample_mixer(int d, const MixerParams& params, std::uint64_t seed) {
  if (d < 1) throw ArgumentError("sample_mixer: d must be >= 1");
  if (params.n_layers < 1) throw ArgumentError("sample_mixer: n_layers must be >= 1");
  if (!(params.alpha > 0.0)) throw ArgumentError("sample_mixer: alpha must be > 0");
  if (!(params.cond_ratio_threshold > 0.0)) throw ArgumentError("sample_mixer: threshold must be > 0");
  if (params.cond_ratio_threshold >= 1.0)
    throw ConfigError("sample_mixer: a singular value ratio threshold >= 1 is unsatisfiable");

  Rng rng(seed);
  std::vector<MatrixXd> weights;
  for (int l = 0; l < params.n_layers; ++l) {
    int draws = 0;
    for (;;) {
      if (draws++ >= params.max_draws_per_layer)
        throw ResourceError("sample_mixer: no well-conditioned matrix after " +
                            std::to_string(params.max_draws_per_layer) + " draws (layer " +
                            std::to_string(l) + ")");
      MatrixXd w = standard_normal(d, d, rng);
      if (singular_value_ratio(w) >= params.cond_ratio_threshold) {
        weights.push_back(std::move(w));
        break;
      }
    }
  }
  return InvertibleMixer(std::move(weights), params.alpha, params.cond_ratio_threshold);
}

std::filesystem::path mixer_path(const std::filesystem::path& dir, const std::string& experiment_id,
                                 int modality) {
  return dir / ("mixer_" + experiment_id + "_m" + std::to_string(modality) + ".csv");
}

}  // namespace mmcl
