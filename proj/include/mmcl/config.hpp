#pragma once

// Experiment configuration and its flat `key = value` file format.
//
//   # comment
//   n_c = 5
//   perturb_prob = 0.75
//   seeds = 0,1,2
//
// Unknown keys are errors. Keys that are absent keep their defaults.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "mmcl/eval.hpp"
#include "mmcl/latent_model.hpp"
#include "mmcl/mixing.hpp"
#include "mmcl/nets.hpp"
#include "mmcl/objective.hpp"

namespace mmcl {

struct Budget {
  int batch_size = 1024;
  long iterations = 50000;
  Eigen::Index eval_train = 5000;
  Eigen::Index eval_test = 2000;
  Eigen::Index val_samples = 2000;
};

enum class Scale { desk, paper };

struct ExperimentConfig {
  GenerativeSettings latent;
  MixerParams mixer;
  bool shared_mixer = false;  // f1 = f2 and g1 = g2 (the original setting)
  EncoderParams encoder;
  int encoding_size = 5;
  ObjectiveConfig objective;
  AdamParams optimizer;
  double clip_norm = 2.0;
  Budget budget;
  long log_every = 500;
  long val_every = 0;  // 0: no validation loss during training
  std::vector<double> ridge_grid{1e-4, 1e-3, 1e-2, 1e-1};
  int cv_folds = 3;
  ClassifierParams classifier;
  Eigen::Index intervention_batch = 0;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::string out_dir = "out";
  bool save_checkpoints = false;

  // Throws ConfigError when a field is out of range.
  void validate() const;

  // Canonical key/value form; keys sorted.
  std::map<std::string, std::string> to_map() const;
  static ExperimentConfig from_map(const std::map<std::string, std::string>& kv);

  static ExperimentConfig parse(std::istream& is);
  static ExperimentConfig load(const std::filesystem::path& path);
  void write(std::ostream& os) const;

  // 16 hex digits; covers every semantic field except seeds and out_dir.
  std::string hash() const;

  EvalParams eval_params() const;
};

// Budget presets. Only batch size, iterations and sample counts differ.
Budget budget_for(Scale scale);
void apply_scale(ExperimentConfig& cfg, Scale scale);

}  // namespace mmcl
