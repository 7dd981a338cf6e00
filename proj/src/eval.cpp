#include "mmcl/eval.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <string>

#include "mmcl/errors.hpp"
#include "mmcl/latent_model.hpp"
#include "mmcl/rng.hpp"

namespace mmcl {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::MatrixXi;
using Eigen::VectorXd;

MatrixXd rows_of(const MatrixXd& m, const std::vector<Index>& idx) {
  MatrixXd out(static_cast<Index>(idx.size()), m.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Index>(r)) = m.row(idx[r]);
  return out;
}

MatrixXd submatrix(const MatrixXd& m, const std::vector<Index>& rows, const std::vector<Index>& cols) {
  MatrixXd out(static_cast<Index>(rows.size()), static_cast<Index>(cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j)
      out(static_cast<Index>(i), static_cast<Index>(j)) = m(rows[i], cols[j]);
  return out;
}

Eigen::LLT<MatrixXd> factor_regularized(MatrixXd gram, double lambda) {
  gram.diagonal().array() += lambda;
  Eigen::LLT<MatrixXd> llt(gram);
  if (llt.info() != Eigen::Success)
    throw NumericalError("kernel ridge: Cholesky of K + lambda I failed (lambda = " + std::to_string(lambda) +
                         "); try a larger ridge");
  return llt;
}

struct Target {
  TargetBlock block;
  const MatrixXd* values;
  std::optional<int> classes;
};

struct SideData {
  int side;
  MatrixXd features;  // encodings, all holdout rows
  std::vector<Target> targets;
};

// Scores all targets of one side: KRR for continuous blocks, a shallow
// classifier for categorical ones.
void score_side(const SideData& data, Index n_train, Index n_test, const EvalParams& params, std::uint64_t seed,
                std::vector<BlockScore>& out) {
  const Index n = n_train + n_test;
  assert(data.features.rows() == n);
  // Train rows [0, n_train), test rows [n_train, n): disjoint by construction.
  const Standardizer fs = Standardizer::fit(data.features.topRows(n_train));
  const MatrixXd train_x = fs.transform(data.features.topRows(n_train));
  const MatrixXd test_x = fs.transform(data.features.bottomRows(n_test));

  std::vector<std::pair<Index, Index>> groups;
  std::vector<const Target*> continuous;
  Index width = 0;
  for (const auto& t : data.targets) {
    if (t.classes) continue;
    groups.emplace_back(width, t.values->cols());
    continuous.push_back(&t);
    width += t.values->cols();
  }

  if (!continuous.empty()) {
    MatrixXd y(n, width);
    for (std::size_t g = 0; g < continuous.size(); ++g)
      y.middleCols(groups[g].first, groups[g].second) = *continuous[g]->values;
    const Standardizer ys = Standardizer::fit(y.topRows(n_train));
    const MatrixXd train_y = ys.transform(y.topRows(n_train));
    const MatrixXd test_y = ys.transform(y.bottomRows(n_test));

    const double gamma = median_heuristic_gamma(train_x);
    const std::vector<double> lambdas =
        select_ridge_cv(train_x, train_y, groups, gamma, params.ridge_grid, params.cv_folds);

    std::map<double, MatrixXd> predictions;
    for (double lambda : lambdas)
      if (!predictions.contains(lambda)) predictions[lambda] = krr_fit(train_x, train_y, gamma, lambda).predict(test_x);

    for (std::size_t g = 0; g < continuous.size(); ++g) {
      const auto [start, cols] = groups[g];
      const MatrixXd& pred = predictions.at(lambdas[g]);
      out.push_back({data.side, continuous[g]->block, ScoreType::r2,
                     r_squared(pred.middleCols(start, cols), test_y.middleCols(start, cols))});
    }
  }

  for (const auto& t : data.targets) {
    if (!t.classes) continue;
    const MatrixXi labels = recover_classes(*t.values, *t.classes);
    const double acc = classify_accuracy(train_x, labels.topRows(n_train), test_x, labels.bottomRows(n_test),
                                         *t.classes, params.classifier,
                                         derive_seed(seed, static_cast<std::uint64_t>(100 * data.side) +
                                                               static_cast<std::uint64_t>(t.block)));
    out.push_back({data.side, t.block, ScoreType::accuracy, acc});
  }
}

std::optional<int> classes_for(const LatentSpec& spec, TargetBlock block, int side) {
  switch (block) {
    case TargetBlock::content:
    case TargetBlock::content_intervened: return spec.discrete_classes(BlockKind::content);
    case TargetBlock::style: return spec.discrete_classes(BlockKind::style);
    case TargetBlock::modality:
      return spec.discrete_classes(side == 1 ? BlockKind::modality1 : BlockKind::modality2);
  }
  return std::nullopt;
}

void check_encoders(const TrainedEncoders& enc, const GenerativeModel& model) {
  if (!enc.g1 || !enc.g2) throw ConfigError("evaluation needs both encoders");
  if (enc.g1->in_dim() != model.spec().dim1() || enc.g2->in_dim() != model.spec().dim2())
    throw ConfigError("encoder input size does not match the generative model");
}

std::vector<BlockScore> score_sides(const TrainedEncoders& enc, const GenerativeModel& model, const MatrixXd& x1,
                                    const MatrixXd& x2, const LatentBatch& latents, const MatrixXd* intervened,
                                    const EvalParams& params, std::uint64_t seed) {
  const LatentSpec& spec = model.spec();
  std::vector<BlockScore> scores;
  for (int side : {1, 2}) {
    SideData data;
    data.side = side;
    data.features = (side == 1 ? enc.g1 : enc.g2)->forward(side == 1 ? x1 : x2);
    const MatrixXd& style = side == 1 ? latents.style1 : latents.style2;
    const MatrixXd& modality = side == 1 ? latents.modality1 : latents.modality2;
    data.targets.push_back({TargetBlock::content, &latents.content, classes_for(spec, TargetBlock::content, side)});
    if (intervened)
      data.targets.push_back(
          {TargetBlock::content_intervened, intervened, classes_for(spec, TargetBlock::content_intervened, side)});
    if (style.cols() > 0)
      data.targets.push_back({TargetBlock::style, &style, classes_for(spec, TargetBlock::style, side)});
    if (modality.cols() > 0)
      data.targets.push_back({TargetBlock::modality, &modality, classes_for(spec, TargetBlock::modality, side)});
    score_side(data, params.n_train, params.n_test, params, seed, scores);
  }
  return scores;
}

}  // namespace

double r_squared(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols())
    throw ArgumentError("r_squared: prediction and truth shapes differ");
  if (truth.rows() < 1 || truth.cols() < 1) throw ArgumentError("r_squared: empty input");
  double total = 0.0;
  for (Index j = 0; j < truth.cols(); ++j) {
    const double mean = truth.col(j).mean();
    const double ss_tot = (truth.col(j).array() - mean).square().sum();
    if (ss_tot == 0.0) return kUndefinedScore;
    const double ss_res = (truth.col(j) - pred.col(j)).squaredNorm();
    total += 1.0 - ss_res / ss_tot;
  }
  return total / static_cast<double>(truth.cols());
}

Standardizer Standardizer::fit(const Eigen::MatrixXd& m) {
  if (m.rows() < 2) throw ArgumentError("standardizer needs at least 2 rows");
  Standardizer s;
  s.mean = m.colwise().mean();
  const MatrixXd centered = m.rowwise() - s.mean;
  s.scale = (centered.colwise().squaredNorm() / static_cast<double>(m.rows())).cwiseSqrt();
  for (Index j = 0; j < s.scale.size(); ++j)
    if (!(s.scale(j) > 0.0)) s.scale(j) = 1.0;
  return s;
}

Eigen::MatrixXd Standardizer::transform(const Eigen::MatrixXd& m) const {
  return (m.rowwise() - mean).array().rowwise() / scale.array();
}

Eigen::MatrixXd rbf_kernel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double gamma) {
  const VectorXd na = a.rowwise().squaredNorm();
  const VectorXd nb = b.rowwise().squaredNorm();
  MatrixXd d = -2.0 * a * b.transpose();
  d.colwise() += na;
  d.rowwise() += nb.transpose();
  return (-gamma * d.cwiseMax(0.0)).array().exp();
}

double median_heuristic_gamma(const Eigen::MatrixXd& x, Eigen::Index max_rows) {
  const Index n = std::min(x.rows(), max_rows);
  if (n < 2) throw ArgumentError("median heuristic needs at least 2 rows");
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) d.push_back((x.row(i) - x.row(j)).norm());
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  const double m = *mid;
  if (!(m > 0.0)) throw NumericalError("median heuristic: all points coincide");
  return 1.0 / (2.0 * m * m);
}

KrrModel::KrrModel(Eigen::MatrixXd train_inputs, Eigen::MatrixXd dual, double gamma, double lambda)
    : train_(std::move(train_inputs)), dual_(std::move(dual)), gamma_(gamma), lambda_(lambda) {}

Eigen::MatrixXd KrrModel::predict(const Eigen::MatrixXd& x) const {
  if (x.cols() != train_.cols()) throw ArgumentError("krr predict: feature width mismatch");
  return rbf_kernel(x, train_, gamma_) * dual_;
}

KrrModel krr_fit(const Eigen::MatrixXd& features, const Eigen::MatrixXd& targets, double gamma, double lambda) {
  if (features.rows() != targets.rows()) throw ArgumentError("krr_fit: row counts differ");
  if (features.rows() < 1) throw ArgumentError("krr_fit: empty training set");
  if (!(lambda > 0.0)) throw ArgumentError("krr_fit: ridge must be > 0");
  if (!(gamma > 0.0)) throw ArgumentError("krr_fit: bandwidth must be > 0");
  const auto llt = factor_regularized(rbf_kernel(features, features, gamma), lambda);
  return KrrModel(features, llt.solve(targets), gamma, lambda);
}

std::vector<double> select_ridge_cv(const Eigen::MatrixXd& features, const Eigen::MatrixXd& targets,
                                    std::span<const std::pair<Eigen::Index, Eigen::Index>> groups, double gamma,
                                    std::span<const double> lambdas, int folds) {
  const Index n = features.rows();
  if (targets.rows() != n) throw ArgumentError("select_ridge_cv: row counts differ");
  if (lambdas.empty()) throw ArgumentError("select_ridge_cv: empty ridge grid");
  if (folds < 2 || n < folds) throw ArgumentError("select_ridge_cv: need 2 <= folds <= rows");
  if (lambdas.size() == 1) return std::vector<double>(groups.size(), lambdas.front());

  const MatrixXd gram = rbf_kernel(features, features, gamma);
  // err(lambda, group), summed over folds.
  MatrixXd err = MatrixXd::Zero(static_cast<Index>(lambdas.size()), static_cast<Index>(groups.size()));
  for (int f = 0; f < folds; ++f) {
    const Index lo = n * f / folds;
    const Index hi = n * (f + 1) / folds;
    std::vector<Index> tr, va;
    for (Index i = 0; i < n; ++i) (i >= lo && i < hi ? va : tr).push_back(i);
    const MatrixXd k_tr = submatrix(gram, tr, tr);
    const MatrixXd k_va = submatrix(gram, va, tr);
    const MatrixXd y_tr = rows_of(targets, tr);
    const MatrixXd y_va = rows_of(targets, va);
    for (std::size_t l = 0; l < lambdas.size(); ++l) {
      MatrixXd resid;
      try {
        resid = k_va * factor_regularized(k_tr, lambdas[l]).solve(y_tr) - y_va;
      } catch (const NumericalError&) {
        err.row(static_cast<Index>(l)).setConstant(std::numeric_limits<double>::infinity());
        continue;
      }
      for (std::size_t g = 0; g < groups.size(); ++g)
        err(static_cast<Index>(l), static_cast<Index>(g)) +=
            resid.middleCols(groups[g].first, groups[g].second).squaredNorm();
    }
  }
  std::vector<double> best(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    Index arg = 0;
    err.col(static_cast<Index>(g)).minCoeff(&arg);
    if (!std::isfinite(err(arg, static_cast<Index>(g))))
      throw NumericalError("select_ridge_cv: every ridge value failed to factorize");
    best[g] = lambdas[static_cast<std::size_t>(arg)];
  }
  return best;
}

double classify_accuracy(const Eigen::MatrixXd& train_x, const Eigen::MatrixXi& train_y, const Eigen::MatrixXd& test_x,
                         const Eigen::MatrixXi& test_y, int k, const ClassifierParams& params, std::uint64_t seed) {
  if (k < 2) throw ArgumentError("classify_accuracy: k must be >= 2");
  if (train_x.rows() != train_y.rows() || test_x.rows() != test_y.rows() || train_y.cols() != test_y.cols() ||
      train_x.cols() != test_x.cols())
    throw ArgumentError("classify_accuracy: shape mismatch");
  if (train_x.rows() < 1 || test_x.rows() < 1 || train_y.cols() < 1)
    throw ArgumentError("classify_accuracy: empty split");
  if ((train_y.array() < 0).any() || (train_y.array() >= k).any() || (test_y.array() < 0).any() ||
      (test_y.array() >= k).any())
    throw ArgumentError("classify_accuracy: label outside [0, k)");
  for (Index c = 0; c < train_y.cols(); ++c)
    if ((train_y.col(c).array() == train_y(0, c)).all())
      throw ArgumentError("classify_accuracy: degenerate task, a single class in the training split");

  const Index heads = train_y.cols();
  const Index n = train_x.rows();
  EncoderParams ep;
  ep.n_layers = 2;
  ep.hidden_width = params.hidden_width;
  EncoderNet net(static_cast<int>(train_x.cols()), static_cast<int>(heads * k), ep, seed);
  AdamState adam(AdamParams{.lr = params.lr});
  auto ps = net.parameters();
  adam.init(std::vector<const MatrixXd*>(ps.begin(), ps.end()));

  ForwardCache cache;
  for (int step = 0; step < params.steps; ++step) {
    const MatrixXd logits = net.forward(train_x, &cache);
    MatrixXd grad(n, heads * k);
    for (Index h = 0; h < heads; ++h) {
      for (Index i = 0; i < n; ++i) {
        auto row = logits.row(i).segment(h * k, k);
        const double mx = row.maxCoeff();
        const Eigen::RowVectorXd e = (row.array() - mx).exp();
        grad.row(i).segment(h * k, k) = e / e.sum();
        grad(i, h * k + train_y(i, h)) -= 1.0;
      }
    }
    grad /= static_cast<double>(n * heads);
    const GradientSet g = net.backward(cache, grad);
    adam.step(ps, g.params);
  }

  const MatrixXd logits = net.forward(test_x);
  Index correct = 0;
  for (Index h = 0; h < heads; ++h)
    for (Index i = 0; i < test_x.rows(); ++i) {
      Index arg = 0;
      logits.row(i).segment(h * k, k).maxCoeff(&arg);
      correct += arg == test_y(i, h);
    }
  return static_cast<double>(correct) / static_cast<double>(test_x.rows() * heads);
}

double classify_accuracy(const Eigen::MatrixXd& features, const Eigen::MatrixXi& labels, int k, Eigen::Index n_train,
                         const ClassifierParams& params, std::uint64_t seed) {
  if (n_train < 1 || n_train >= features.rows()) throw ArgumentError("classify_accuracy: bad split");
  const Index n_test = features.rows() - n_train;
  const Standardizer s = Standardizer::fit(features.topRows(n_train));
  return classify_accuracy(s.transform(features.topRows(n_train)), labels.topRows(n_train),
                           s.transform(features.bottomRows(n_test)), labels.bottomRows(n_test), k, params, seed);
}

std::string_view to_string(TargetBlock b) {
  switch (b) {
    case TargetBlock::content: return "content";
    case TargetBlock::content_intervened: return "content_intervened";
    case TargetBlock::style: return "style";
    case TargetBlock::modality: return "modality";
  }
  return "?";
}

std::string_view to_string(ScoreType t) { return t == ScoreType::r2 ? "r2" : "accuracy"; }

std::optional<double> IdentReport::score(int side, TargetBlock block) const {
  for (const auto& s : scores)
    if (s.side == side && s.block == block) return s.score;
  return std::nullopt;
}

void IdentReport::write_csv_header(std::ostream& os) {
  os << "config,seed,side,block,score_type,score,n_train,n_test,encoding_size\n";
}

void IdentReport::write_csv_rows(std::ostream& os) const {
  const auto old_precision = os.precision(6);
  for (const auto& s : scores)
    os << config_id << ',' << seed << ',' << s.side << ',' << to_string(s.block) << ',' << to_string(s.type) << ','
       << std::fixed << s.score << std::defaultfloat << ',' << n_train << ',' << n_test << ',' << encoding_size
       << '\n';
  os.precision(old_precision);
}

IdentReport evaluate_blocks(const TrainedEncoders& enc, const GenerativeModel& model, const PairedBatch& holdout,
                            const EvalParams& params, std::uint64_t seed) {
  model.check_linked(holdout);
  check_encoders(enc, model);
  if (params.n_train < 2 || params.n_test < 2) throw ArgumentError("evaluation splits need at least 2 rows each");
  if (holdout.latents.size() != params.n_train + params.n_test)
    throw ArgumentError("holdout must hold n_train + n_test rows");

  IdentReport report;
  report.config_id = model.id();
  report.seed = seed;
  report.encoding_size = enc.g1->out_dim();
  report.n_train = params.n_train;
  report.n_test = params.n_test;
  report.scores = score_sides(enc, model, holdout.x1, holdout.x2, holdout.latents, nullptr, params, seed);
  return report;
}

IdentReport evaluate_intervention(const TrainedEncoders& enc, const GenerativeModel& model, const EvalParams& params,
                                  std::uint64_t seed) {
  check_encoders(enc, model);
  if (params.n_train < 2 || params.n_test < 2) throw ArgumentError("evaluation splits need at least 2 rows each");
  const Index n = params.n_train + params.n_test;
  const LatentBatch original = sample_pairs(model.spec(), n, derive_seed(seed, Stream::holdout));

  LatentBatch intervened = original;
  const Index chunk = params.intervention_batch > 0 ? params.intervention_batch : n;
  const std::uint64_t perm_seed = derive_seed(seed, Stream::intervention);
  for (Index start = 0, c = 0; start < n; start += chunk, ++c) {
    const Index len = std::min(chunk, n - start);
    LatentBatch part;
    part.content = original.content.middleRows(start, len);
    intervened.content.middleRows(start, len) =
        intervene_content(part, derive_seed(perm_seed, static_cast<std::uint64_t>(c))).content;
  }
  const PairedBatch observed = model.observe(intervened);

  IdentReport report;
  report.config_id = model.id();
  report.seed = seed;
  report.encoding_size = enc.g1->out_dim();
  report.n_train = params.n_train;
  report.n_test = params.n_test;
  // `original` keeps the pre-intervention content; observations carry c'.
  LatentBatch targets = intervened;
  targets.content = original.content;
  report.scores =
      score_sides(enc, model, observed.x1, observed.x2, targets, &intervened.content, params, seed);
  return report;
}

ElbowEstimate find_elbow(std::span<const int> sizes, std::span<const double> losses) {
  if (sizes.size() != losses.size()) throw ArgumentError("find_elbow: sizes and losses differ in length");
  if (sizes.size() < 3) throw ArgumentError("find_elbow: at least 3 candidates are needed");
  for (std::size_t i = 1; i < sizes.size(); ++i)
    if (sizes[i] <= sizes[i - 1]) throw ArgumentError("find_elbow: sizes must be strictly increasing");

  ElbowEstimate e;
  double scale = 1.0;
  for (double v : losses) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 1; i + 1 < losses.size(); ++i)
    e.second_differences.push_back(losses[i + 1] - 2.0 * losses[i] + losses[i - 1]);

  const auto best = std::max_element(e.second_differences.begin(), e.second_differences.end());
  e.index = static_cast<std::size_t>(best - e.second_differences.begin()) + 1;
  e.size = sizes[e.index];
  double runner_up = 0.0;
  for (auto it = e.second_differences.begin(); it != e.second_differences.end(); ++it)
    if (it != best) runner_up = std::max(runner_up, *it);
  e.confident = *best > 1e-8 * scale && *best >= 1.5 * runner_up;
  return e;
}

ContentDimEstimate estimate_content_dim(std::span<const int> sizes,
                                        const std::function<double(int)>& validation_loss) {
  if (sizes.size() < 3) throw ArgumentError("estimate_content_dim: at least 3 candidate sizes are needed");
  for (std::size_t i = 1; i < sizes.size(); ++i)
    if (sizes[i] <= sizes[i - 1]) throw ArgumentError("estimate_content_dim: sizes must be strictly increasing");
  if (sizes.front() < 1) throw ArgumentError("estimate_content_dim: sizes must be >= 1");

  ContentDimEstimate out;
  std::vector<double> losses;
  for (int size : sizes) {
    const double loss = validation_loss(size);
    out.curve.emplace_back(size, loss);
    losses.push_back(loss);
  }
  out.elbow = find_elbow(sizes, losses);
  return out;
}

}  // namespace mmcl
