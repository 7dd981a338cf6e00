#include "mmcl/objective.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "mmcl/errors.hpp"

namespace mmcl {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void check_pair(const MatrixXd& a, const MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ArgumentError("encodings must have equal shape, got " + std::to_string(a.rows()) + "x" +
                        std::to_string(a.cols()) + " and " + std::to_string(b.rows()) + "x" +
                        std::to_string(b.cols()));
  if (a.rows() < 1 || a.cols() < 1) throw ArgumentError("encodings must be non-empty");
  if (!a.allFinite() || !b.allFinite()) throw NumericalError("non-finite encodings");
}

RowMatrix pairwise_sq_dist(const MatrixXd& a, const MatrixXd& b) {
  const Index n = b.rows();
  RowMatrix d = RowMatrix::Zero(a.rows(), n);
  for (Index i = 0; i < a.rows(); ++i) {
    double* out = d.data() + i * n;
    for (Index k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      const double* bk = b.data() + k * n;
      for (Index j = 0; j < n; ++j) {
        const double diff = bk[j] - aik;
        out[j] += diff * diff;
      }
    }
  }
  return d;
}

VectorXd row_norms(const MatrixXd& m) {
  VectorXd n = m.rowwise().norm();
  if ((n.array() == 0.0).any()) throw NumericalError("cosine similarity of a zero-norm encoding");
  return n;
}

// Row-wise log-sum-exp, accumulated left to right.
double log_sum_exp_row(const RowMatrix& logits, Index i) {
  double mx = -std::numeric_limits<double>::infinity();
  for (Index j = 0; j < logits.cols(); ++j) mx = std::max(mx, logits(i, j));
  double acc = 0.0;
  for (Index j = 0; j < logits.cols(); ++j) acc += std::exp(logits(i, j) - mx);
  return mx + std::log(acc);
}

}  // namespace

std::string_view to_string(Similarity s) {
  switch (s) {
    case Similarity::neg_euclidean: return "neg_euclidean";
    case Similarity::neg_sq_euclidean: return "neg_sq_euclidean";
    case Similarity::cosine: return "cosine";
  }
  return "?";
}

std::optional<Similarity> parse_similarity(std::string_view name) {
  if (name == "neg_euclidean" || name == "euclidean") return Similarity::neg_euclidean;
  if (name == "neg_sq_euclidean" || name == "sq_euclidean") return Similarity::neg_sq_euclidean;
  if (name == "cosine") return Similarity::cosine;
  return std::nullopt;
}

Eigen::MatrixXd similarity_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, Similarity sim) {
  switch (sim) {
    case Similarity::neg_euclidean: return MatrixXd(-pairwise_sq_dist(a, b).cwiseSqrt());
    case Similarity::neg_sq_euclidean: return MatrixXd(-pairwise_sq_dist(a, b));
    case Similarity::cosine: {
      const MatrixXd an = row_norms(a).cwiseInverse().asDiagonal() * a;
      const MatrixXd bn = row_norms(b).cwiseInverse().asDiagonal() * b;
      return an * bn.transpose();
    }
  }
  return {};
}

LossResult info_nce(const Eigen::MatrixXd& enc1, const Eigen::MatrixXd& enc2, const ObjectiveConfig& cfg) {
  check_pair(enc1, enc2);
  if (!(cfg.temperature > 0.0)) throw ArgumentError("temperature must be > 0");
  const Index K = enc1.rows();
  const Index dim = enc1.cols();
  const double inv_tau = 1.0 / cfg.temperature;
  const bool cosine = cfg.similarity == Similarity::cosine;

  // Cosine works on unit rows; the distance similarities on the raw rows.
  VectorXd na, nb;
  MatrixXd a = enc1;
  MatrixXd b = enc2;
  if (cosine) {
    na = row_norms(enc1);
    nb = row_norms(enc2);
    a = na.cwiseInverse().asDiagonal() * enc1;
    b = nb.cwiseInverse().asDiagonal() * enc2;
  }

  // One row of the K x K similarity matrix at a time. For row i, w_j is
  // dLoss/dS_ij times the factor that turns it into a gradient:
  //   neg_sq_euclidean: dS/da_i = -2 (a_i - b_j)
  //   neg_euclidean:    dS/da_i = -(a_i - b_j) / d_ij (zero subgradient at d = 0)
  //   cosine:           dS/da_i = b_j (before the projection below)
  LossResult r;
  r.grad1 = MatrixXd::Zero(K, dim);
  r.grad2 = MatrixXd::Zero(K, dim);
  VectorXd col_sum = VectorXd::Zero(K);
  Eigen::ArrayXd sq(K), dist(K), logits(K), w(K);
  const double scale = inv_tau / static_cast<double>(K);
  double total = 0.0;
  for (Index i = 0; i < K; ++i) {
    if (cosine) {
      logits.setZero();
      for (Index k = 0; k < dim; ++k) logits += b.col(k).array() * a(i, k);
    } else {
      sq.setZero();
      for (Index k = 0; k < dim; ++k) sq += (b.col(k).array() - a(i, k)).square();
      if (cfg.similarity == Similarity::neg_euclidean) {
        dist = sq.sqrt();
        logits = -dist;
      } else {
        logits = -sq;
      }
    }
    logits *= inv_tau;

    const double mx = logits.maxCoeff();
    w = (logits - mx).exp();
    const double acc = w.sum();
    total += mx + std::log(acc) - logits(i);
    // dLoss/dS_ij = (softmax_ij - [i = j]) / (K tau)
    w *= scale / acc;
    w(i) -= scale;

    switch (cfg.similarity) {
      case Similarity::neg_sq_euclidean: w *= 2.0; break;
      case Similarity::neg_euclidean: w = (dist > 0.0).select(w / dist, 0.0); break;
      case Similarity::cosine: break;
    }

    const double w_sum = w.sum();
    for (Index k = 0; k < dim; ++k) {
      r.grad1(i, k) = (w * b.col(k).array()).sum();
      r.grad2.col(k).array() += w * a(i, k);
    }
    if (!cosine) {
      r.grad1.row(i) -= w_sum * a.row(i);
      col_sum.array() += w;
    }
  }
  r.loss = total / static_cast<double>(K);

  if (cosine) {
    // Project out the radial component and undo the normalization.
    const VectorXd ra = a.cwiseProduct(r.grad1).rowwise().sum();
    const VectorXd rb = b.cwiseProduct(r.grad2).rowwise().sum();
    r.grad1 = na.cwiseInverse().asDiagonal() * MatrixXd(r.grad1 - ra.asDiagonal() * a);
    r.grad2 = nb.cwiseInverse().asDiagonal() * MatrixXd(r.grad2 - rb.asDiagonal() * b);
  } else {
    r.grad2 -= col_sum.asDiagonal() * b;
  }
  return r;
}

LossResult sym_info_nce(const Eigen::MatrixXd& enc1, const Eigen::MatrixXd& enc2, const ObjectiveConfig& cfg) {
  const LossResult forward = info_nce(enc1, enc2, cfg);
  const LossResult backward = info_nce(enc2, enc1, cfg);
  LossResult r;
  r.loss = 0.5 * (forward.loss + backward.loss);
  r.grad1 = 0.5 * (forward.grad1 + backward.grad2);
  r.grad2 = 0.5 * (forward.grad2 + backward.grad1);
  return r;
}

AlignmentUniformity alignment_uniformity(const Eigen::MatrixXd& enc1, const Eigen::MatrixXd& enc2) {
  check_pair(enc1, enc2);
  const Index K = enc1.rows();
  if (K < 2) throw ArgumentError("entropy estimate needs at least 2 samples");
  const RowMatrix sq = pairwise_sq_dist(enc1, enc2);
  const RowMatrix logits = -sq;
  const double log_k = std::log(static_cast<double>(K));

  AlignmentUniformity out;
  double align = 0.0;
  for (Index i = 0; i < K; ++i) align += std::sqrt(sq(i, i));
  out.alignment = align / static_cast<double>(K);

  double h1 = 0.0;
  for (Index i = 0; i < K; ++i) h1 += log_sum_exp_row(logits, i) - log_k;
  out.entropy1 = -h1 / static_cast<double>(K);

  const RowMatrix logits_t = logits.transpose();
  double h2 = 0.0;
  for (Index j = 0; j < K; ++j) h2 += log_sum_exp_row(logits_t, j) - log_k;
  out.entropy2 = -h2 / static_cast<double>(K);
  return out;
}

}  // namespace mmcl
