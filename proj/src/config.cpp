#include "mmcl/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <sstream>

#include "mmcl/errors.hpp"

namespace mmcl {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as " + expected);
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* first = value.data();
  const char* last = value.data() + value.size();
  if (!value.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last) bad_value(key, value, "a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  bad_value(key, value, "a boolean");
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& value) {
  std::vector<T> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(key, trim(item)));
  return out;
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<T>)
      out += fmt_double(v[i]);
    else
      out += std::to_string(v[i]);
  }
  return out;
}

int discrete_k(const GenerativeSettings& g, BlockKind b) {
  auto it = g.discrete_blocks.find(b);
  return it == g.discrete_blocks.end() ? 0 : it->second;
}

void set_discrete(GenerativeSettings& g, BlockKind b, int k) {
  if (k == 0)
    g.discrete_blocks.erase(b);
  else
    g.discrete_blocks[b] = k;
}

struct Field {
  const char* key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string& key, const std::string& value)> set;
  bool semantic = true;  // part of the config hash
};

#define MMCL_INT_FIELD(name, member)                                                        \
  Field {                                                                                   \
    name, [](const ExperimentConfig& c) { return std::to_string(c.member); },                \
        [](ExperimentConfig& c, const std::string& k, const std::string& v) {               \
          c.member = parse_number<std::decay_t<decltype(c.member)>>(k, v);                  \
        }                                                                                   \
  }
#define MMCL_DOUBLE_FIELD(name, member)                                                     \
  Field {                                                                                   \
    name, [](const ExperimentConfig& c) { return fmt_double(c.member); },                    \
        [](ExperimentConfig& c, const std::string& k, const std::string& v) {               \
          c.member = parse_number<double>(k, v);                                            \
        }                                                                                   \
  }
#define MMCL_BOOL_FIELD(name, member)                                                          \
  Field {                                                                                      \
    name, [](const ExperimentConfig& c) { return std::string(c.member ? "true" : "false"); },   \
        [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.member = parse_bool(k, v); } \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      MMCL_INT_FIELD("n_c", latent.n_c),
      MMCL_INT_FIELD("n_s", latent.n_s),
      MMCL_INT_FIELD("n_m1", latent.n_m1),
      MMCL_INT_FIELD("n_m2", latent.n_m2),
      MMCL_DOUBLE_FIELD("perturb_prob", latent.perturb_prob),
      MMCL_BOOL_FIELD("statistical", latent.statistical),
      MMCL_BOOL_FIELD("causal", latent.causal),
      MMCL_DOUBLE_FIELD("eps_sigma", latent.eps_sigma),
      Field{"sampling_mode",
            [](const ExperimentConfig& c) {
              return std::string(c.latent.mode == SamplingMode::symmetric ? "symmetric" : "asymmetric");
            },
            [](ExperimentConfig& c, const std::string& k, const std::string& v) {
              if (v == "symmetric")
                c.latent.mode = SamplingMode::symmetric;
              else if (v == "asymmetric")
                c.latent.mode = SamplingMode::asymmetric;
              else
                bad_value(k, v, "asymmetric|symmetric");
            }},
      Field{"discrete_content", [](const ExperimentConfig& c) { return std::to_string(discrete_k(c.latent, BlockKind::content)); },
            [](ExperimentConfig& c, const std::string& k, const std::string& v) {
              set_discrete(c.latent, BlockKind::content, parse_number<int>(k, v));
            }},
      Field{"discrete_style", [](const ExperimentConfig& c) { return std::to_string(discrete_k(c.latent, BlockKind::style)); },
            [](ExperimentConfig& c, const std::string& k, const std::string& v) {
              set_discrete(c.latent, BlockKind::style, parse_number<int>(k, v));
            }},
      Field{"discrete_modality",
            [](const ExperimentConfig& c) { return std::to_string(discrete_k(c.latent, BlockKind::modality1)); },
            [](ExperimentConfig& c, const std::string& k, const std::string& v) {
              const int n = parse_number<int>(k, v);
              set_discrete(c.latent, BlockKind::modality1, n);
              set_discrete(c.latent, BlockKind::modality2, n);
            }},
      MMCL_INT_FIELD("mixer_layers", mixer.n_layers),
      MMCL_DOUBLE_FIELD("mixer_threshold", mixer.cond_ratio_threshold),
      MMCL_DOUBLE_FIELD("mixer_alpha", mixer.alpha),
      MMCL_INT_FIELD("mixer_max_draws", mixer.max_draws_per_layer),
      MMCL_BOOL_FIELD("shared_mixer", shared_mixer),
      MMCL_INT_FIELD("encoder_layers", encoder.n_layers),
      MMCL_INT_FIELD("encoder_width", encoder.hidden_width),
      MMCL_DOUBLE_FIELD("encoder_alpha", encoder.alpha),
      MMCL_BOOL_FIELD("encoder_sigmoid", encoder.sigmoid_output),
      MMCL_INT_FIELD("encoding_size", encoding_size),
      MMCL_DOUBLE_FIELD("temperature", objective.temperature),
      Field{"similarity", [](const ExperimentConfig& c) { return std::string(to_string(c.objective.similarity)); },
            [](ExperimentConfig& c, const std::string& k, const std::string& v) {
              auto s = parse_similarity(v);
              if (!s) bad_value(k, v, "neg_euclidean|neg_sq_euclidean|cosine");
              c.objective.similarity = *s;
            }},
      MMCL_DOUBLE_FIELD("learning_rate", optimizer.lr),
      MMCL_DOUBLE_FIELD("beta1", optimizer.beta1),
      MMCL_DOUBLE_FIELD("beta2", optimizer.beta2),
      MMCL_DOUBLE_FIELD("adam_eps", optimizer.eps),
      MMCL_DOUBLE_FIELD("clip_norm", clip_norm),
      MMCL_INT_FIELD("batch_size", budget.batch_size),
      MMCL_INT_FIELD("iterations", budget.iterations),
      MMCL_INT_FIELD("eval_train", budget.eval_train),
      MMCL_INT_FIELD("eval_test", budget.eval_test),
      MMCL_INT_FIELD("val_samples", budget.val_samples),
      MMCL_INT_FIELD("log_every", log_every),
      MMCL_INT_FIELD("val_every", val_every),
      Field{"ridge_grid", [](const ExperimentConfig& c) { return join(c.ridge_grid); },
            [](ExperimentConfig& c, const std::string& k, const std::string& v) {
              c.ridge_grid = parse_list<double>(k, v);
            }},
      MMCL_INT_FIELD("cv_folds", cv_folds),
      MMCL_INT_FIELD("classifier_width", classifier.hidden_width),
      MMCL_INT_FIELD("classifier_steps", classifier.steps),
      MMCL_DOUBLE_FIELD("classifier_lr", classifier.lr),
      MMCL_INT_FIELD("intervention_batch", intervention_batch),
      Field{"seeds", [](const ExperimentConfig& c) { return join(c.seeds); },
            [](ExperimentConfig& c, const std::string& k, const std::string& v) {
              c.seeds = parse_list<std::uint64_t>(k, v);
            },
            false},
      Field{"out_dir", [](const ExperimentConfig& c) { return c.out_dir; },
            [](ExperimentConfig& c, const std::string&, const std::string& v) { c.out_dir = v; }, false},
      Field{"save_checkpoints",
            [](const ExperimentConfig& c) { return std::string(c.save_checkpoints ? "true" : "false"); },
            [](ExperimentConfig& c, const std::string& k, const std::string& v) {
              c.save_checkpoints = parse_bool(k, v);
            },
            false},
  };
  return table;
}

#undef MMCL_INT_FIELD
#undef MMCL_DOUBLE_FIELD
#undef MMCL_BOOL_FIELD

const Field* find_field(const std::string& key) {
  for (const auto& f : fields())
    if (key == f.key) return &f;
  return nullptr;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (encoding_size < 1) throw ConfigError("encoding_size must be >= 1");
  if (budget.iterations < 1) throw ConfigError("iterations must be >= 1");
  if (budget.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (budget.eval_train < 2 || budget.eval_test < 2) throw ConfigError("eval_train and eval_test must be >= 2");
  if (budget.val_samples < 2) throw ConfigError("val_samples must be >= 2");
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (!(objective.temperature > 0.0)) throw ConfigError("temperature must be > 0");
  if (!(optimizer.lr >= 0.0)) throw ConfigError("learning_rate must be >= 0");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0 && optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0))
    throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(optimizer.eps > 0.0)) throw ConfigError("adam_eps must be > 0");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be > 0");
  if (log_every < 1) throw ConfigError("log_every must be >= 1");
  if (val_every < 0) throw ConfigError("val_every must be >= 0");
  if (encoder.n_layers < 1) throw ConfigError("encoder_layers must be >= 1");
  if (encoder.hidden_width < 0) throw ConfigError("encoder_width must be >= 0");
  if (mixer.n_layers < 1) throw ConfigError("mixer_layers must be >= 1");
  if (!(mixer.cond_ratio_threshold > 0.0 && mixer.cond_ratio_threshold < 1.0))
    throw ConfigError("mixer_threshold must lie in (0, 1)");
  if (!(mixer.alpha > 0.0)) throw ConfigError("mixer_alpha must be > 0");
  if (ridge_grid.empty()) throw ConfigError("ridge_grid must not be empty");
  for (double l : ridge_grid)
    if (!(l > 0.0)) throw ConfigError("ridge values must be > 0");
  if (cv_folds < 2) throw ConfigError("cv_folds must be >= 2");
  if (intervention_batch < 0) throw ConfigError("intervention_batch must be >= 0");
  if (shared_mixer && latent.n_m1 != latent.n_m2)
    throw ConfigError("shared_mixer needs equal modality block sizes");
  if (latent.n_c < 1 || latent.n_s < 0 || latent.n_m1 < 0 || latent.n_m2 < 0)
    throw ConfigError("latent block sizes out of range");
  if (!(latent.perturb_prob >= 0.0 && latent.perturb_prob <= 1.0))
    throw ConfigError("perturb_prob must lie in [0, 1]");
  if (latent.n_s > 0 && !(latent.perturb_prob > 0.0))
    throw ConfigError("perturb_prob must be > 0 when style dimensions exist");
  if (!(latent.eps_sigma > 0.0)) throw ConfigError("eps_sigma must be > 0");
  for (const auto& [block, k] : latent.discrete_blocks)
    if (k < 2) throw ConfigError("discrete class counts must be >= 2");
}

std::map<std::string, std::string> ExperimentConfig::to_map() const {
  std::map<std::string, std::string> kv;
  for (const auto& f : fields()) kv[f.key] = f.get(*this);
  return kv;
}

ExperimentConfig ExperimentConfig::from_map(const std::map<std::string, std::string>& kv) {
  ExperimentConfig cfg;
  for (const auto& [key, value] : kv) {
    const Field* f = find_field(key);
    if (!f) throw ConfigError("unknown config key '" + key + "'");
    f->set(cfg, key, value);
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::parse(std::istream& is) {
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    const std::string body = trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (kv.contains(key)) throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    kv[key] = value;
  }
  return from_map(kv);
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  return parse(in);
}

void ExperimentConfig::write(std::ostream& os) const {
  for (const auto& [k, v] : to_map()) os << k << " = " << v << '\n';
}

std::string ExperimentConfig::hash() const {
  std::string canonical;
  for (const auto& f : fields()) {
    if (!f.semantic) continue;
    canonical += f.key;
    canonical += '=';
    canonical += f.get(*this);
    canonical += '\n';
  }
  // fields() has a fixed order, so the digest is independent of file order.
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(canonical)));
  return buf;
}

EvalParams ExperimentConfig::eval_params() const {
  EvalParams p;
  p.n_train = budget.eval_train;
  p.n_test = budget.eval_test;
  p.ridge_grid = ridge_grid;
  p.cv_folds = cv_folds;
  p.classifier = classifier;
  p.intervention_batch = intervention_batch;
  return p;
}

Budget budget_for(Scale scale) {
  Budget b;
  if (scale == Scale::paper) {
    b.batch_size = 6144;
    b.iterations = 300000;
  }
  return b;
}

void apply_scale(ExperimentConfig& cfg, Scale scale) { cfg.budget = budget_for(scale); }

}  // namespace mmcl
