#include "mmcl/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "mmcl/errors.hpp"
#include "mmcl/objective.hpp"
#include "mmcl/rng.hpp"

#ifndef MMCL_VERSION
#define MMCL_VERSION "0.0.0"
#endif

namespace mmcl {

namespace {

using Eigen::MatrixXd;

std::string fmt_score(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string fmt_prob(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string join_seeds(const std::vector<std::uint64_t>& seeds) {
  std::string out;
  for (std::size_t i = 0; i < seeds.size(); ++i) out += (i ? ";" : "") + std::to_string(seeds[i]);
  return out;
}

std::string label_slug(const Labels& labels) {
  std::string out;
  for (const auto& [k, v] : labels) {
    if (!out.empty()) out += '_';
    out += k + '-' + v;
  }
  std::replace(out.begin(), out.end(), '.', 'p');
  return out;
}

bool labels_match(const Labels& labels, const Labels& match) {
  for (const auto& m : match)
    if (std::find(labels.begin(), labels.end(), m) == labels.end()) return false;
  return true;
}

void write_label_header(std::ostream& os, const Labels& labels) {
  for (const auto& [k, v] : labels) os << k << ',';
}

void write_label_values(std::ostream& os, const Labels& labels) {
  for (const auto& [k, v] : labels) os << v << ',';
}

// Runs `fn(i)` for i in [0, n) on up to `threads` workers; rethrows the
// first failure after all workers finish.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, n); ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

ExperimentConfig with_setting(ExperimentConfig cfg, const SettingRow& row) {
  cfg.latent.perturb_prob = row.perturb_prob;
  cfg.latent.statistical = row.statistical;
  cfg.latent.causal = row.causal;
  return cfg;
}

Labels setting_labels(const std::string& column, const SettingRow& row) {
  return {{"column", column},
          {"p_chg", fmt_prob(row.perturb_prob)},
          {"stat", row.statistical ? "1" : "0"},
          {"causal", row.causal ? "1" : "0"}};
}

IdentReport evaluate_job(const ExperimentConfig& cfg, std::uint64_t seed, RunRecord& record) {
  return train_and_evaluate(cfg, seed, &record);
}

DriverReport grid_driver(const std::string& name, const ExperimentConfig& base, bool original_column,
                         bool modality_latents, const DriverOptions& opts) {
  std::vector<std::pair<Labels, ExperimentConfig>> cells;
  for (const std::string column : {"original", "multimodal"}) {
    if (column == "original" && !original_column) continue;
    for (const auto& row : table_settings()) {
      ExperimentConfig cfg = with_setting(base, row);
      if (column == "original") {
        cfg.shared_mixer = true;
        cfg.latent.n_m1 = cfg.latent.n_m2 = 0;
      } else {
        cfg.shared_mixer = false;
        if (!modality_latents) cfg.latent.n_m1 = cfg.latent.n_m2 = 0;
      }
      cells.emplace_back(setting_labels(column, row), cfg);
    }
  }
  DriverReport report;
  report.name = name;
  report.cells = run_cells(cells, opts, evaluate_job);
  report.summary = summarize(report.cells);
  return report;
}

}  // namespace

std::string artifact_version() { return MMCL_VERSION; }

void RunRecord::write_trace_csv(std::ostream& os) const {
  const bool has_val = std::any_of(trace.begin(), trace.end(), [](const LossPoint& p) { return p.val_loss.has_value(); });
  os << (has_val ? "iteration,loss,val_loss\n" : "iteration,loss\n");
  for (const auto& p : trace) {
    os << p.iteration << ',' << fmt_score(p.loss);
    if (has_val) os << ',' << (p.val_loss ? fmt_score(*p.val_loss) : std::string());
    os << '\n';
  }
}

GenerativeModel build_model(const ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  LatentSpec spec = build_latent_spec(cfg.latent, seed);
  InvertibleMixer f1 = sample_mixer(spec.dim1(), cfg.mixer, derive_seed(seed, Stream::mixer1));
  InvertibleMixer f2 = cfg.shared_mixer ? f1 : sample_mixer(spec.dim2(), cfg.mixer, derive_seed(seed, Stream::mixer2));
  return GenerativeModel(std::move(spec), std::move(f1), std::move(f2), cfg.hash() + "-s" + std::to_string(seed));
}

TrainedRun train(const ExperimentConfig& cfg, std::uint64_t seed, const ProgressFn& progress) {
  const auto t0 = std::chrono::steady_clock::now();
  GenerativeModel model = build_model(cfg, seed);
  const LatentSpec& spec = model.spec();

  TrainedRun run{model, EncoderNet(spec.dim1(), cfg.encoding_size, cfg.encoder, derive_seed(seed, Stream::encoder1)),
                 std::nullopt, RunRecord{}};
  if (!cfg.shared_mixer)
    run.g2.emplace(spec.dim2(), cfg.encoding_size, cfg.encoder, derive_seed(seed, Stream::encoder2));
  run.record.config_hash = cfg.hash();
  run.record.seed = seed;

  AdamState opt1(cfg.optimizer);
  AdamState opt2(cfg.optimizer);
  auto params1 = run.g1.parameters();
  opt1.init(std::vector<const MatrixXd*>(params1.begin(), params1.end()));
  std::vector<MatrixXd*> params2;
  if (run.g2) {
    params2 = run.g2->parameters();
    opt2.init(std::vector<const MatrixXd*>(params2.begin(), params2.end()));
  }

  std::optional<PairedBatch> val_batch;
  if (cfg.val_every > 0) val_batch = model.sample(cfg.budget.val_samples, derive_seed(seed, Stream::validation));

  const std::uint64_t data_seed = derive_seed(seed, Stream::train_data);
  ForwardCache cache1;
  ForwardCache cache2;
  double window_loss = 0.0;
  long window_count = 0;

  for (long it = 1; it <= cfg.budget.iterations; ++it) {
    const PairedBatch batch = model.sample(cfg.budget.batch_size, derive_seed(data_seed, static_cast<std::uint64_t>(it)));
    const EncoderNet& g2 = run.g2 ? *run.g2 : run.g1;
    const MatrixXd e1 = run.g1.forward(batch.x1, &cache1);
    const MatrixXd e2 = g2.forward(batch.x2, &cache2);

    LossResult loss;
    try {
      loss = sym_info_nce(e1, e2, cfg.objective);
    } catch (const NumericalError& e) {
      run.record.diverged = true;
      run.record.diagnostic = "iteration " + std::to_string(it) + ": " + e.what();
      break;
    }
    if (!std::isfinite(loss.loss)) {
      run.record.diverged = true;
      run.record.diagnostic = "iteration " + std::to_string(it) + ": non-finite loss";
      break;
    }

    std::vector<GradientSet> grads;
    grads.push_back(run.g1.backward(cache1, loss.grad1));
    grads.push_back(g2.backward(cache2, loss.grad2));
    if (!run.g2) {
      for (std::size_t i = 0; i < grads[0].params.size(); ++i) grads[0].params[i] += grads[1].params[i];
      grads.pop_back();
    }
    try {
      clip_global_norm(grads, cfg.clip_norm);
    } catch (const NumericalError& e) {
      run.record.diverged = true;
      run.record.diagnostic = "iteration " + std::to_string(it) + ": " + e.what();
      break;
    }
    opt1.step(params1, grads[0].params);
    if (run.g2) opt2.step(params2, grads[1].params);
    if (!run.g1.all_finite() || (run.g2 && !run.g2->all_finite())) {
      run.record.diverged = true;
      run.record.diagnostic = "iteration " + std::to_string(it) + ": non-finite parameters";
      break;
    }

    window_loss += loss.loss;
    ++window_count;
    const bool log_now = it % cfg.log_every == 0 || it == cfg.budget.iterations;
    const bool val_now = val_batch && (it % cfg.val_every == 0 || it == cfg.budget.iterations);
    if (log_now || val_now) {
      LossPoint p{it, window_loss / static_cast<double>(window_count), std::nullopt};
      if (val_now) {
        const MatrixXd v1 = run.g1.forward(val_batch->x1);
        const MatrixXd v2 = g2.forward(val_batch->x2);
        p.val_loss = sym_info_nce(v1, v2, cfg.objective).loss;
      }
      run.record.trace.push_back(p);
      if (progress) progress(it, p.loss);
      window_loss = 0.0;
      window_count = 0;
    }
  }

  if (cfg.save_checkpoints && !run.record.diverged) {
    const std::filesystem::path dir(cfg.out_dir);
    std::filesystem::create_directories(dir);
    const std::string stem = "ckpt_" + run.record.config_hash + "_s" + std::to_string(seed);
    run.record.checkpoint1 = dir / (stem + "_g1.bin");
    run.g1.save(run.record.checkpoint1);
    if (run.g2) {
      run.record.checkpoint2 = dir / (stem + "_g2.bin");
      run.g2->save(run.record.checkpoint2);
    } else {
      run.record.checkpoint2 = run.record.checkpoint1;
    }
    model.mixer1().save(mixer_path(dir, model.id(), 1));
    model.mixer2().save(mixer_path(dir, model.id(), 2));
  }
  run.record.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return run;
}

double validation_loss(const TrainedRun& run, const ExperimentConfig& cfg, std::uint64_t seed) {
  const PairedBatch batch = run.model.sample(cfg.budget.val_samples, derive_seed(seed, Stream::validation));
  const auto enc = run.encoders();
  return sym_info_nce(enc.g1->forward(batch.x1), enc.g2->forward(batch.x2), cfg.objective).loss;
}

IdentReport train_and_evaluate(const ExperimentConfig& cfg, std::uint64_t seed, RunRecord* record,
                               const ProgressFn& progress) {
  TrainedRun run = train(cfg, seed, progress);
  if (record) *record = run.record;
  if (run.record.diverged) throw NumericalError("training diverged: " + run.record.diagnostic);
  const EvalParams params = cfg.eval_params();
  const PairedBatch holdout =
      run.model.sample(params.n_train + params.n_test, derive_seed(seed, Stream::holdout));
  IdentReport report = evaluate_blocks(run.encoders(), run.model, holdout, params, seed);
  report.config_id = cfg.hash();
  if (record) record->reports.push_back(report);
  return report;
}

std::vector<SummaryRow> summarize(const std::vector<CellResult>& cells) {
  std::vector<SummaryRow> rows;
  for (const auto& cell : cells) {
    if (cell.reports.empty()) continue;
    for (const auto& first : cell.reports.front().scores) {
      SummaryRow row;
      row.labels = cell.labels;
      row.config_hash = cell.config_hash;
      row.side = first.side;
      row.block = first.block;
      row.type = first.type;
      std::vector<double> values;
      for (const auto& rep : cell.reports) {
        if (auto s = rep.score(first.side, first.block)) values.push_back(*s);
        row.seeds.push_back(rep.seed);
      }
      double sum = 0.0;
      for (double v : values) sum += v;
      row.mean = sum / static_cast<double>(values.size());
      double sq = 0.0;
      for (double v : values) sq += (v - row.mean) * (v - row.mean);
      row.std = std::sqrt(sq / static_cast<double>(values.size()));
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::optional<double> DriverReport::mean(const Labels& match, int side, TargetBlock block) const {
  for (const auto& row : summary)
    if (labels_match(row.labels, match) && row.side == side && row.block == block) return row.mean;
  return std::nullopt;
}

void DriverReport::write_raw_csv(std::ostream& os) const {
  if (cells.empty()) return;
  write_label_header(os, cells.front().labels);
  os << "config,seed,side,block,score_type,score,n_train,n_test,encoding_size,version\n";
  for (const auto& cell : cells)
    for (const auto& rep : cell.reports)
      for (const auto& s : rep.scores) {
        write_label_values(os, cell.labels);
        os << cell.config_hash << ',' << rep.seed << ',' << s.side << ',' << to_string(s.block) << ','
           << to_string(s.type) << ',' << fmt_score(s.score) << ',' << rep.n_train << ',' << rep.n_test << ','
           << rep.encoding_size << ',' << artifact_version() << '\n';
      }
}

void DriverReport::write_summary_csv(std::ostream& os) const {
  if (summary.empty()) return;
  write_label_header(os, summary.front().labels);
  os << "config,side,block,score_type,mean,std,n_seeds,seeds,version\n";
  for (const auto& row : summary) {
    write_label_values(os, row.labels);
    os << row.config_hash << ',' << row.side << ',' << to_string(row.block) << ',' << to_string(row.type) << ','
       << fmt_score(row.mean) << ',' << fmt_score(row.std) << ',' << row.seeds.size() << ','
       << join_seeds(row.seeds) << ',' << artifact_version() << '\n';
  }
}

void DriverReport::write_files(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / (name + "_raw.csv"));
    write_raw_csv(out);
  }
  {
    std::ofstream out(dir / (name + "_summary.csv"));
    write_summary_csv(out);
  }
  for (const auto& cell : cells)
    for (const auto& run : cell.runs) {
      std::ofstream out(dir / ("trace_" + name + "_" + label_slug(cell.labels) + "_seed" + std::to_string(run.seed) +
                               ".csv"));
      run.write_trace_csv(out);
    }
}

std::vector<CellResult> run_cells(
    const std::vector<std::pair<Labels, ExperimentConfig>>& cells, const DriverOptions& opts,
    const std::function<IdentReport(const ExperimentConfig&, std::uint64_t, RunRecord&)>& job) {
  std::vector<CellResult> results(cells.size());
  std::vector<std::pair<std::size_t, std::size_t>> jobs;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    cells[c].second.validate();
    results[c].labels = cells[c].first;
    results[c].config_hash = cells[c].second.hash();
    results[c].reports.resize(cells[c].second.seeds.size());
    results[c].runs.resize(cells[c].second.seeds.size());
    for (std::size_t s = 0; s < cells[c].second.seeds.size(); ++s) jobs.emplace_back(c, s);
  }
  std::mutex log_mutex;
  parallel_for(jobs.size(), opts.threads, [&](std::size_t j) {
    const auto [c, s] = jobs[j];
    const ExperimentConfig& cfg = cells[c].second;
    const std::uint64_t seed = cfg.seeds[s];
    const auto t0 = std::chrono::steady_clock::now();
    results[c].reports[s] = job(cfg, seed, results[c].runs[s]);
    if (opts.verbose) {
      std::lock_guard lock(log_mutex);
      std::cerr << "[" << label_slug(cells[c].first) << " seed " << seed << "] done in "
                << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s\n";
    }
  });
  return results;
}

const std::vector<SettingRow>& table_settings() {
  static const std::vector<SettingRow> rows = {
      {1.0, false, false}, {0.75, false, false}, {0.75, true, false}, {0.75, false, true}, {0.75, true, true}};
  return rows;
}

DriverReport run_table1(const ExperimentConfig& base, const DriverOptions& opts) {
  return grid_driver("table1", base, true, true, opts);
}

DriverReport run_ablation_no_modality_latents(const ExperimentConfig& base, const DriverOptions& opts) {
  return grid_driver("ablation_no_modality", base, true, false, opts);
}

std::string_view to_string(DiscreteSweep s) {
  switch (s) {
    case DiscreteSweep::style: return "style";
    case DiscreteSweep::modality: return "modality";
    case DiscreteSweep::content: return "content";
  }
  return "?";
}

DriverReport run_discrete_ablation(const ExperimentConfig& base, const std::vector<DiscreteSweep>& sweeps,
                                   const std::vector<int>& k_values, const DriverOptions& opts) {
  for (int k : k_values)
    if (k < 2) throw ArgumentError("discrete ablation: k must be >= 2, got " + std::to_string(k));
  std::vector<std::pair<Labels, ExperimentConfig>> cells;
  for (auto sweep : sweeps)
    for (int k : k_values) {
      ExperimentConfig cfg = base;
      cfg.shared_mixer = false;
      cfg.latent.statistical = false;
      cfg.latent.causal = false;
      cfg.latent.discrete_blocks.clear();
      cfg.encoding_size = cfg.latent.n_c;
      switch (sweep) {
        case DiscreteSweep::style: cfg.latent.discrete_blocks[BlockKind::style] = k; break;
        case DiscreteSweep::modality:
          cfg.latent.discrete_blocks[BlockKind::modality1] = k;
          cfg.latent.discrete_blocks[BlockKind::modality2] = k;
          break;
        case DiscreteSweep::content: cfg.latent.discrete_blocks[BlockKind::content] = k; break;
      }
      cells.push_back({{{"sweep", std::string(to_string(sweep))}, {"k", std::to_string(k)}}, cfg});
    }
  DriverReport report;
  report.name = "ablation_discrete";
  report.cells = run_cells(cells, opts, evaluate_job);
  report.summary = summarize(report.cells);
  return report;
}

DriverReport run_dim_ablation(const ExperimentConfig& base, DimAxis vary, const std::vector<int>& sizes,
                              const DriverOptions& opts) {
  if (sizes.empty()) throw ArgumentError("dimension ablation needs at least one size");
  std::vector<std::pair<Labels, ExperimentConfig>> cells;
  const std::string axis = vary == DimAxis::style ? "n_s" : "n_m";
  for (int size : sizes) {
    if (size < (vary == DimAxis::style ? 1 : 0)) throw ArgumentError("dimension ablation: invalid size");
    ExperimentConfig cfg = base;
    cfg.shared_mixer = false;
    if (vary == DimAxis::style)
      cfg.latent.n_s = size;
    else
      cfg.latent.n_m1 = cfg.latent.n_m2 = size;
    cells.push_back({{{"axis", axis}, {"size", std::to_string(size)}}, cfg});
  }
  DriverReport report;
  report.name = "ablation_dims_" + axis;
  report.cells = run_cells(cells, opts, evaluate_job);
  report.summary = summarize(report.cells);
  return report;
}

DriverReport run_intervention_eval(const ExperimentConfig& base, const std::vector<SettingRow>& settings,
                                   const DriverOptions& opts) {
  std::vector<std::pair<Labels, ExperimentConfig>> cells;
  for (const auto& row : settings) {
    ExperimentConfig cfg = with_setting(base, row);
    cfg.shared_mixer = false;
    cells.emplace_back(setting_labels("multimodal", row), cfg);
  }
  DriverReport report;
  report.name = "intervention";
  report.cells = run_cells(cells, opts, [](const ExperimentConfig& cfg, std::uint64_t seed, RunRecord& record) {
    TrainedRun run = train(cfg, seed);
    record = run.record;
    if (run.record.diverged) throw NumericalError("training diverged: " + run.record.diagnostic);
    IdentReport rep = evaluate_intervention(run.encoders(), run.model, cfg.eval_params(), seed);
    rep.config_id = cfg.hash();
    record.reports.push_back(rep);
    return rep;
  });
  report.summary = summarize(report.cells);
  return report;
}

void ModelSelectionReport::write_curve_csv(std::ostream& os) const {
  os << "config,seed,encoding_size,val_loss,version\n";
  for (const auto& r : per_seed)
    for (const auto& [size, loss] : r.estimate.curve)
      os << config_hash << ',' << r.seed << ',' << size << ',' << fmt_score(loss) << ',' << artifact_version() << '\n';
}

void ModelSelectionReport::write_elbow_csv(std::ostream& os) const {
  os << "config,seed,elbow,confident,version\n";
  for (const auto& r : per_seed)
    os << config_hash << ',' << r.seed << ',' << r.estimate.elbow.size << ',' << (r.estimate.elbow.confident ? 1 : 0)
       << ',' << artifact_version() << '\n';
}

void ModelSelectionReport::write_files(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream curve(dir / "model_selection_curve.csv");
  write_curve_csv(curve);
  std::ofstream elbow(dir / "model_selection_elbow.csv");
  write_elbow_csv(elbow);
}

ModelSelectionReport run_model_selection(const ExperimentConfig& base, const std::vector<int>& sizes,
                                         const DriverOptions& opts) {
  if (sizes.size() < 3) throw ArgumentError("model selection needs at least 3 candidate sizes");
  for (std::size_t i = 1; i < sizes.size(); ++i)
    if (sizes[i] <= sizes[i - 1]) throw ArgumentError("model selection sizes must be strictly increasing");
  base.validate();

  const std::size_t n_seeds = base.seeds.size();
  std::vector<double> losses(n_seeds * sizes.size());
  std::mutex log_mutex;
  parallel_for(losses.size(), opts.threads, [&](std::size_t j) {
    const std::size_t s = j / sizes.size();
    const std::size_t m = j % sizes.size();
    ExperimentConfig cfg = base;
    cfg.encoding_size = sizes[m];
    const TrainedRun run = train(cfg, base.seeds[s]);
    if (run.record.diverged) throw NumericalError("training diverged: " + run.record.diagnostic);
    losses[j] = validation_loss(run, cfg, base.seeds[s]);
    if (opts.verbose) {
      std::lock_guard lock(log_mutex);
      std::cerr << "[select-dim seed " << base.seeds[s] << " size " << sizes[m] << "] val loss " << losses[j] << "\n";
    }
  });

  ModelSelectionReport report;
  report.config_hash = base.hash();
  for (std::size_t s = 0; s < n_seeds; ++s) {
    ModelSelectionResult r;
    r.seed = base.seeds[s];
    r.estimate = estimate_content_dim(sizes, [&](int size) {
      const auto m = static_cast<std::size_t>(std::find(sizes.begin(), sizes.end(), size) - sizes.begin());
      return losses[s * sizes.size() + m];
    });
    report.per_seed.push_back(std::move(r));
  }
  return report;
}

void merge_csv(const std::vector<std::filesystem::path>& inputs, std::ostream& os) {
  if (inputs.empty()) throw ArgumentError("merge_csv: no input files");
  std::string header;
  std::vector<std::string> rows;
  for (const auto& path : inputs) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw ConfigError(path.string() + " is empty");
    if (header.empty())
      header = line;
    else if (line != header)
      throw ConfigError(path.string() + ": header differs from " + inputs.front().string());
    while (std::getline(in, line))
      if (!line.empty()) rows.push_back(line);
  }
  std::sort(rows.begin(), rows.end());
  os << header << '\n';
  for (const auto& r : rows) os << r << '\n';
}

}  // namespace mmcl
