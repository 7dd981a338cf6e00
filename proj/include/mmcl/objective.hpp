#pragma once

// Contrastive objectives over a batch of K matched encodings, with the other
// K-1 rows acting as negatives.

#include <optional>
#include <string_view>

#include <Eigen/Dense>

namespace mmcl {

enum class Similarity {
  neg_euclidean,     // -||a - b||
  neg_sq_euclidean,  // -||a - b||^2
  cosine,            // <a, b> / (||a|| ||b||)
};

std::string_view to_string(Similarity s);
std::optional<Similarity> parse_similarity(std::string_view name);

struct ObjectiveConfig {
  double temperature = 1.0;
  Similarity similarity = Similarity::neg_euclidean;
};

struct LossResult {
  double loss = 0.0;
  Eigen::MatrixXd grad1;  // d loss / d enc1
  Eigen::MatrixXd grad2;  // d loss / d enc2
};

// S(i, j) = sim(a_i, b_j).
Eigen::MatrixXd similarity_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, Similarity sim);

// mean_i [ -S_ii / tau + log sum_j exp(S_ij / tau) ], S = sim(enc1_i, enc2_j).
LossResult info_nce(const Eigen::MatrixXd& enc1, const Eigen::MatrixXd& enc2, const ObjectiveConfig& cfg);

// (info_nce(enc1, enc2) + info_nce(enc2, enc1)) / 2.
LossResult sym_info_nce(const Eigen::MatrixXd& enc1, const Eigen::MatrixXd& enc2, const ObjectiveConfig& cfg);

struct AlignmentUniformity {
  double alignment = 0.0;  // mean ||enc1_i - enc2_i||
  double entropy1 = 0.0;   // -mean_i log mean_j exp(-||enc1_i - enc2_j||^2)
  double entropy2 = 0.0;   // -mean_j log mean_i exp(-||enc1_i - enc2_j||^2)
};

// Diagnostics for the alignment-minus-entropy view of the symmetric loss.
// Needs K >= 2.
AlignmentUniformity alignment_uniformity(const Eigen::MatrixXd& enc1, const Eigen::MatrixXd& enc2);

}  // namespace mmcl
