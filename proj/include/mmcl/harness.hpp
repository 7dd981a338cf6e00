#pragma once

// Training loop and the experiment drivers that regenerate each results
// table as CSV.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mmcl/config.hpp"
#include "mmcl/eval.hpp"
#include "mmcl/generative.hpp"
#include "mmcl/nets.hpp"

namespace mmcl {

// Artifact version stamped on every report row.
std::string artifact_version();

struct LossPoint {
  long iteration = 0;
  double loss = 0.0;  // mean training loss since the previous point
  std::optional<double> val_loss;
};

struct RunRecord {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<LossPoint> trace;
  std::vector<IdentReport> reports;
  double wall_clock_s = 0.0;
  std::filesystem::path checkpoint1;
  std::filesystem::path checkpoint2;
  bool diverged = false;
  std::string diagnostic;

  // `iteration,loss[,val_loss]`
  void write_trace_csv(std::ostream& os) const;
};

// Ground truth for (config, seed): latent spec with frozen random
// covariances and causal weights, plus the two mixers (identical when
// shared_mixer is set).
GenerativeModel build_model(const ExperimentConfig& cfg, std::uint64_t seed);

struct TrainedRun {
  GenerativeModel model;
  EncoderNet g1;
  std::optional<EncoderNet> g2;  // empty when one encoder serves both sides
  RunRecord record;

  TrainedEncoders encoders() const { return {&g1, g2 ? &*g2 : &g1}; }
};

using ProgressFn = std::function<void(long iteration, double loss)>;

// Online training with the symmetric InfoNCE loss: a fresh batch per
// iteration, joint global-norm clipping, Adam. Deterministic per
// (config, seed). A non-finite loss or parameter stops the run and marks the
// record as diverged.
TrainedRun train(const ExperimentConfig& cfg, std::uint64_t seed, const ProgressFn& progress = {});

// Symmetric InfoNCE over one held-out contrast batch of val_samples rows.
double validation_loss(const TrainedRun& run, const ExperimentConfig& cfg, std::uint64_t seed);

// Train, then score blocks on a fresh holdout.
IdentReport train_and_evaluate(const ExperimentConfig& cfg, std::uint64_t seed, RunRecord* record = nullptr,
                               const ProgressFn& progress = {});

// ---------------------------------------------------------------------------
// Reports

using Labels = std::vector<std::pair<std::string, std::string>>;

struct CellResult {
  Labels labels;  // identifies the configuration cell, e.g. p_chg, stat
  std::string config_hash;
  std::vector<IdentReport> reports;  // one per seed
  std::vector<RunRecord> runs;
};

struct SummaryRow {
  Labels labels;
  std::string config_hash;
  int side = 1;
  TargetBlock block = TargetBlock::content;
  ScoreType type = ScoreType::r2;
  double mean = 0.0;
  double std = 0.0;  // population standard deviation over seeds
  std::vector<std::uint64_t> seeds;
};

std::vector<SummaryRow> summarize(const std::vector<CellResult>& cells);

struct DriverReport {
  std::string name;
  std::vector<CellResult> cells;
  std::vector<SummaryRow> summary;

  // Mean over seeds for the first cell whose labels contain `match`.
  std::optional<double> mean(const Labels& match, int side, TargetBlock block) const;

  void write_raw_csv(std::ostream& os) const;
  void write_summary_csv(std::ostream& os) const;
  // <name>_raw.csv, <name>_summary.csv and one loss trace per run.
  void write_files(const std::filesystem::path& dir) const;
};

struct DriverOptions {
  int threads = 1;
  bool verbose = false;
};

// Runs every (cell, seed) job, in parallel when threads > 1. Output order
// depends only on the input order.
std::vector<CellResult> run_cells(const std::vector<std::pair<Labels, ExperimentConfig>>& cells,
                                  const DriverOptions& opts,
                                  const std::function<IdentReport(const ExperimentConfig&, std::uint64_t, RunRecord&)>& job);

struct SettingRow {
  double perturb_prob;
  bool statistical;
  bool causal;
};

// The five generative settings of the simulation grid.
const std::vector<SettingRow>& table_settings();

// Five settings x {original (f1 = f2, no modality latents, one encoder),
// multimodal (f1 != f2, with modality latents)}.
DriverReport run_table1(const ExperimentConfig& base, const DriverOptions& opts);
// Same grid with n_m1 = n_m2 = 0 in both columns.
DriverReport run_ablation_no_modality_latents(const ExperimentConfig& base, const DriverOptions& opts);

enum class DiscreteSweep { style, modality, content };
std::string_view to_string(DiscreteSweep s);

DriverReport run_discrete_ablation(const ExperimentConfig& base, const std::vector<DiscreteSweep>& sweeps,
                                   const std::vector<int>& k_values, const DriverOptions& opts);

enum class DimAxis { style, modality };
DriverReport run_dim_ablation(const ExperimentConfig& base, DimAxis vary, const std::vector<int>& sizes,
                              const DriverOptions& opts);

// Multimodal grid; every cell is scored with test-time content intervention.
DriverReport run_intervention_eval(const ExperimentConfig& base, const std::vector<SettingRow>& settings,
                                   const DriverOptions& opts);

struct ModelSelectionResult {
  std::uint64_t seed = 0;
  ContentDimEstimate estimate;
};

struct ModelSelectionReport {
  std::string config_hash;
  std::vector<ModelSelectionResult> per_seed;

  void write_curve_csv(std::ostream& os) const;  // config,seed,encoding_size,val_loss,version
  void write_elbow_csv(std::ostream& os) const;  // config,seed,elbow,confident,version
  void write_files(const std::filesystem::path& dir) const;
};

ModelSelectionReport run_model_selection(const ExperimentConfig& base, const std::vector<int>& sizes,
                                         const DriverOptions& opts);

// Concatenates CSV files sharing one header; rows are emitted sorted.
void merge_csv(const std::vector<std::filesystem::path>& inputs, std::ostream& os);

}  // namespace mmcl
