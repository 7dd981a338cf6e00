// mmcl-lab: command-line front end for simulation, training and the
// experiment drivers.

#include <malloc.h>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mmcl/config.hpp"
#include "mmcl/errors.hpp"
#include "mmcl/harness.hpp"
#include "mmcl/rng.hpp"

namespace {

using namespace mmcl;

struct Common {
  std::string config_path;
  std::vector<std::uint64_t> seeds;
  std::string out;
  bool scaled = false;
  bool paper_scale = false;
  int threads = 1;
  bool verbose = false;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "Config file (key = value)")->check(CLI::ExistingFile);
  cmd->add_option("--seeds,--seed", c.seeds, "Seed list, overrides the config")->delimiter(',');
  cmd->add_option("--out", c.out, "Output directory, overrides the config");
  auto* s = cmd->add_flag("--scaled", c.scaled, "Desk-scale budget (K = 1024, 50k iterations)");
  cmd->add_flag("--paper-scale", c.paper_scale, "Paper budget (K = 6144, 300k iterations)")->excludes(s);
  cmd->add_option("--threads", c.threads, "Worker threads for independent runs")->check(CLI::PositiveNumber);
  cmd->add_option("--set", c.overrides, "Override a config key: --set key=value");
  cmd->add_flag("-v,--verbose", c.verbose, "Progress on stderr");
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = c.config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load(c.config_path);
  if (c.scaled) apply_scale(cfg, Scale::desk);
  if (c.paper_scale) apply_scale(cfg, Scale::paper);
  if (!c.overrides.empty()) {
    auto kv = cfg.to_map();
    for (const auto& o : c.overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + o + "'");
      kv[o.substr(0, eq)] = o.substr(eq + 1);
    }
    cfg = ExperimentConfig::from_map(kv);
  }
  if (!c.seeds.empty()) cfg.seeds = c.seeds;
  if (!c.out.empty()) cfg.out_dir = c.out;
  cfg.validate();
  return cfg;
}

DriverOptions driver_opts(const Common& c) { return {c.threads, c.verbose}; }

void finish(const DriverReport& report, const ExperimentConfig& cfg) {
  const std::filesystem::path dir(cfg.out_dir);
  report.write_files(dir);
  {
    std::ofstream out(dir / (report.name + "_config.txt"));
    cfg.write(out);
  }
  report.write_summary_csv(std::cout);
}

template <class T>
void write_matrix_csv(const std::filesystem::path& path, const std::string& prefix, const T& m) {
  std::ofstream out(path);
  out.precision(17);
  for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? "," : "") << prefix << j;
  out << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? "," : "") << m(i, j);
    out << '\n';
  }
}

std::vector<DiscreteSweep> parse_sweeps(const std::vector<std::string>& names) {
  std::vector<DiscreteSweep> out;
  for (const auto& n : names) {
    if (n == "style")
      out.push_back(DiscreteSweep::style);
    else if (n == "modality")
      out.push_back(DiscreteSweep::modality);
    else if (n == "content")
      out.push_back(DiscreteSweep::content);
    else
      throw ConfigError("unknown sweep '" + n + "'");
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  // Keep large per-iteration buffers on the heap instead of fresh mmaps.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  CLI::App app{"Multimodal contrastive learning identifiability lab"};
  app.require_subcommand(1);
  Common c;

  auto* simulate = app.add_subcommand("simulate", "Sample a paired batch and dump latents and observations");
  add_common(simulate, c);
  Eigen::Index sim_n = 1000;
  simulate->add_option("-n,--samples", sim_n, "Batch size")->check(CLI::PositiveNumber);

  auto* train_cmd = app.add_subcommand("train", "Train and evaluate one run per seed");
  add_common(train_cmd, c);

  auto* table1 = app.add_subcommand("table1", "Original vs multimodal over the five generative settings");
  add_common(table1, c);

  auto* no_mod = app.add_subcommand("ablate-no-modality", "Original vs multimodal grid without modality-specific latents");
  add_common(no_mod, c);

  auto* discrete = app.add_subcommand("ablate-discrete", "Discrete style, modality or content blocks");
  add_common(discrete, c);
  std::vector<std::string> sweep_names{"style", "modality"};
  std::vector<int> k_values{3, 5, 10};
  discrete->add_option("--sweeps", sweep_names, "style, modality, content")->delimiter(',');
  discrete->add_option("--k", k_values, "Numbers of classes")->delimiter(',');

  auto* dims = app.add_subcommand("ablate-dims", "Vary style or modality dimensionality");
  add_common(dims, c);
  std::string axis = "style";
  std::vector<int> dim_sizes{1, 2, 5, 10};
  dims->add_option("--axis", axis, "style or modality")->check(CLI::IsMember({"style", "modality"}));
  dims->add_option("--sizes", dim_sizes, "Block sizes")->delimiter(',');

  auto* intervene = app.add_subcommand("intervene", "Evaluate with test-time content intervention");
  add_common(intervene, c);

  auto* select = app.add_subcommand("select-dim", "Estimate the content size from the validation-loss elbow");
  add_common(select, c);
  std::vector<int> select_sizes(10);
  std::iota(select_sizes.begin(), select_sizes.end(), 1);
  select->add_option("--sizes", select_sizes, "Candidate encoding sizes")->delimiter(',');

  auto* report = app.add_subcommand("report", "Merge CSV files that share a header");
  std::vector<std::string> inputs;
  std::string merged;
  report->add_option("inputs", inputs, "CSV files")->required()->check(CLI::ExistingFile);
  report->add_option("-o,--output", merged, "Output file (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (report->parsed()) {
      std::vector<std::filesystem::path> paths(inputs.begin(), inputs.end());
      if (merged.empty()) {
        merge_csv(paths, std::cout);
      } else {
        std::ofstream out(merged);
        merge_csv(paths, out);
      }
      return 0;
    }

    const ExperimentConfig cfg = resolve(c);
    const DriverOptions opts = driver_opts(c);

    if (simulate->parsed()) {
      const std::filesystem::path dir(cfg.out_dir);
      std::filesystem::create_directories(dir);
      for (auto seed : cfg.seeds) {
        const GenerativeModel model = build_model(cfg, seed);
        const PairedBatch batch = model.sample(sim_n, derive_seed(seed, Stream::train_data));
        const std::string stem = "seed" + std::to_string(seed);
        std::ofstream latents(dir / (stem + "_latents.csv"));
        batch.latents.write_csv(latents);
        write_matrix_csv(dir / (stem + "_x1.csv"), "x1_", batch.x1);
        write_matrix_csv(dir / (stem + "_x2.csv"), "x2_", batch.x2);
        model.mixer1().save(mixer_path(dir, model.id(), 1));
        model.mixer2().save(mixer_path(dir, model.id(), 2));
      }
      return 0;
    }

    if (train_cmd->parsed()) {
      ExperimentConfig run_cfg = cfg;
      run_cfg.save_checkpoints = true;
      DriverReport rep;
      rep.name = "train";
      rep.cells = run_cells({{{{"run", "train"}}, run_cfg}}, opts,
                            [&](const ExperimentConfig& k, std::uint64_t seed, RunRecord& record) {
                              ProgressFn progress;
                              if (c.verbose)
                                progress = [seed](long it, double loss) {
                                  std::fprintf(stderr, "seed %llu iteration %ld loss %.4f\n",
                                               static_cast<unsigned long long>(seed), it, loss);
                                };
                              return train_and_evaluate(k, seed, &record, progress);
                            });
      rep.summary = summarize(rep.cells);
      finish(rep, run_cfg);
      return 0;
    }
    if (table1->parsed()) finish(run_table1(cfg, opts), cfg);
    if (no_mod->parsed()) finish(run_ablation_no_modality_latents(cfg, opts), cfg);
    if (discrete->parsed()) finish(run_discrete_ablation(cfg, parse_sweeps(sweep_names), k_values, opts), cfg);
    if (dims->parsed())
      finish(run_dim_ablation(cfg, axis == "style" ? DimAxis::style : DimAxis::modality, dim_sizes, opts), cfg);
    if (intervene->parsed()) finish(run_intervention_eval(cfg, table_settings(), opts), cfg);
    if (select->parsed()) {
      const ModelSelectionReport rep = run_model_selection(cfg, select_sizes, opts);
      rep.write_files(cfg.out_dir);
      rep.write_elbow_csv(std::cout);
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
