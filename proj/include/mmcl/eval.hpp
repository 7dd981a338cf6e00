#pragma once

// Block-identifiability evaluation: how well each ground-truth latent block
// can be predicted from learned encodings on held-out data.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "mmcl/generative.hpp"
#include "mmcl/nets.hpp"

namespace mmcl {

// Returned by r_squared when a target column has zero variance.
inline constexpr double kUndefinedScore = std::numeric_limits<double>::quiet_NaN();

// 1 - SS_res / SS_tot per column, averaged over columns. Returns
// kUndefinedScore if any column of `truth` is constant.
double r_squared(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth);

// Column standardization with statistics frozen from a reference matrix.
struct Standardizer {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd scale;

  static Standardizer fit(const Eigen::MatrixXd& m);
  Eigen::MatrixXd transform(const Eigen::MatrixXd& m) const;
};

// exp(-gamma ||a_i - b_j||^2).
Eigen::MatrixXd rbf_kernel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double gamma);

// gamma = 1 / (2 m^2) for the median pairwise distance m over (at most
// max_rows leading rows of) x.
double median_heuristic_gamma(const Eigen::MatrixXd& x, Eigen::Index max_rows = 1000);

class KrrModel {
 public:
  KrrModel(Eigen::MatrixXd train_inputs, Eigen::MatrixXd dual, double gamma, double lambda);

  Eigen::MatrixXd predict(const Eigen::MatrixXd& x) const;
  const Eigen::MatrixXd& dual_coefficients() const { return dual_; }
  double gamma() const { return gamma_; }
  double lambda() const { return lambda_; }

 private:
  Eigen::MatrixXd train_;
  Eigen::MatrixXd dual_;
  double gamma_;
  double lambda_;
};

// Solves (K + lambda I) alpha = targets by Cholesky; all target columns at
// once. Throws NumericalError if the factorization fails.
KrrModel krr_fit(const Eigen::MatrixXd& features, const Eigen::MatrixXd& targets, double gamma, double lambda);

// Picks, independently for every target group, the ridge with the lowest
// k-fold validation MSE on (features, targets). Groups are column ranges of
// `targets`. Contiguous folds.
std::vector<double> select_ridge_cv(const Eigen::MatrixXd& features, const Eigen::MatrixXd& targets,
                                    std::span<const std::pair<Eigen::Index, Eigen::Index>> groups, double gamma,
                                    std::span<const double> lambdas, int folds);

struct ClassifierParams {
  int hidden_width = 100;
  int steps = 1000;
  double lr = 1e-2;
};

// Trains a one-hidden-layer MLP (softmax cross-entropy, Adam, full batch)
// with one k-way head per label column and returns the mean held-out
// accuracy over columns. Labels are class indices in [0, k).
double classify_accuracy(const Eigen::MatrixXd& train_x, const Eigen::MatrixXi& train_y, const Eigen::MatrixXd& test_x,
                         const Eigen::MatrixXi& test_y, int k, const ClassifierParams& params, std::uint64_t seed);

// Convenience form: the first `n_train` rows train, the rest test.
double classify_accuracy(const Eigen::MatrixXd& features, const Eigen::MatrixXi& labels, int k, Eigen::Index n_train,
                         const ClassifierParams& params, std::uint64_t seed);

enum class TargetBlock { content, content_intervened, style, modality };
enum class ScoreType { r2, accuracy };

std::string_view to_string(TargetBlock b);
std::string_view to_string(ScoreType t);

struct BlockScore {
  int side = 1;  // encoder / modality index, 1 or 2
  TargetBlock block = TargetBlock::content;
  ScoreType type = ScoreType::r2;
  double score = 0.0;
};

struct IdentReport {
  std::string config_id;
  std::uint64_t seed = 0;
  int encoding_size = 0;
  Eigen::Index n_train = 0;
  Eigen::Index n_test = 0;
  std::vector<BlockScore> scores;

  std::optional<double> score(int side, TargetBlock block) const;

  static void write_csv_header(std::ostream& os);
  // One row per (side, block): config,seed,side,block,score_type,score,n_train,n_test,encoding_size
  void write_csv_rows(std::ostream& os) const;
};

struct EvalParams {
  Eigen::Index n_train = 5000;
  Eigen::Index n_test = 2000;
  std::vector<double> ridge_grid{1e-4, 1e-3, 1e-2, 1e-1};
  int cv_folds = 3;
  ClassifierParams classifier;
  // Size of the chunks content is permuted within; 0 permutes the whole
  // holdout at once.
  Eigen::Index intervention_batch = 0;
};

// Encoders and the model they were trained against. g2 may alias g1.
struct TrainedEncoders {
  const EncoderNet* g1 = nullptr;
  const EncoderNet* g2 = nullptr;
};

// Scores every block present in the spec from enc(x1) (content, style,
// modality1) and enc(x2) (content, style~, modality2). The holdout must hold
// n_train + n_test rows and come from `model`.
IdentReport evaluate_blocks(const TrainedEncoders& enc, const GenerativeModel& model, const PairedBatch& holdout,
                            const EvalParams& params, std::uint64_t seed);

// Samples a holdout, permutes content across it, re-mixes the observations
// and scores the original content, the intervened content, style and
// modality blocks.
IdentReport evaluate_intervention(const TrainedEncoders& enc, const GenerativeModel& model, const EvalParams& params,
                                  std::uint64_t seed);

struct ElbowEstimate {
  std::size_t index = 0;  // position in the curve
  int size = 0;           // candidate size at that position
  bool confident = false;
  std::vector<double> second_differences;  // one per interior point
};

// Point of maximum discrete second difference of the loss curve. Needs at
// least 3 points with strictly increasing sizes.
ElbowEstimate find_elbow(std::span<const int> sizes, std::span<const double> losses);

struct ContentDimEstimate {
  std::vector<std::pair<int, double>> curve;  // (encoding size, validation loss)
  ElbowEstimate elbow;
};

// Evaluates `validation_loss` (train a model of the given encoding size and
// return its held-out loss) for every candidate and locates the elbow.
ContentDimEstimate estimate_content_dim(std::span<const int> sizes, const std::function<double(int)>& validation_loss);

}  // namespace mmcl
