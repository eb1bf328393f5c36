#pragma once

// Run configuration: one JSON document with a fixed key schema. Every section
// is optional; absent keys keep their defaults. Unknown top-level keys are
// rejected so typos fail loudly.
//
//   {
//     "seed": 42,
//     "threads": 1,
//     "paths": {"work_dir": "run", "corpus": ..., "labels": ..., "vocab": ...,
//               "checkpoints": ..., "embeddings": ..., "reports": ...},
//     "generator": {"n_accounts": 1000, "signal_strength": 1.0, ...},
//     "vocab": {"size": 8192, "min_frequency": 2},
//     "model": {"max_context": 128, "d_model": 64, ...},
//     "student": {"n_layers": 2},
//     "masking": {"mask_prob": 0.15, ...},
//     "pretrain": {"steps": 5000, "batch_size": 16, "lr": 2e-3, ...},
//     "distill": {"steps": 5000, "temperature": 2.0, "soft": 0.5, "hard": 0.5, ...},
//     "coles": {"hidden": 64, "steps": 1000, ...},
//     "probe": {"l2": 1e-4, "max_iter": 500, "tol": 1e-6, "eval_fraction": 0.2,
//               "tasks": [...], "curve_task": "gender", "curve_metric": "roc_auc",
//               "curve_accounts": 2000},
//     "methods": ["bert", "distilbert", "coles", "feateng"]
//   }
//
// The config hash covers everything except `threads` and `paths`, which do not
// change any output byte.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "txlm/coles.hpp"
#include "txlm/common.hpp"
#include "txlm/encoder.hpp"
#include "txlm/pretrain.hpp"
#include "txlm/probe.hpp"
#include "txlm/synthgen.hpp"
#include "txlm/tasks.hpp"

namespace txlm::config {

// Bad or missing configuration (as opposed to a missing upstream artifact).
class ConfigError : public Error {
 public:
  using Error::Error;
};

inline const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> m = {"bert", "distilbert", "coles", "feateng"};
  return m;
}

struct Paths {
  std::string work_dir = "run";
  std::string corpus, labels, vocab, checkpoints, embeddings, reports;

  // Fills unset paths from work_dir.
  void resolve() {
    const std::filesystem::path w(work_dir);
    auto def = [&](std::string& p, const char* leaf) {
      if (p.empty()) p = (w / leaf).string();
    };
    def(corpus, "corpus.jsonl");
    def(labels, "labels.jsonl");
    def(vocab, "vocab.txt");
    def(checkpoints, "checkpoints");
    def(embeddings, "embeddings");
    def(reports, "reports");
  }

  std::string checkpoint(std::string_view method) const {
    return (std::filesystem::path(checkpoints) / (std::string(method) + ".ckpt")).string();
  }
  std::string embedding(std::string_view method) const {
    return (std::filesystem::path(embeddings) / (std::string(method) + ".csv")).string();
  }
  std::string report(std::string_view leaf) const { return (std::filesystem::path(reports) / leaf).string(); }
};

struct VocabSettings {
  int size = 8192;
  int min_frequency = 2;
};

struct OptimSettings {
  std::int64_t steps = 5000;
  int batch_size = 16;
  double lr = 2e-3;
  double warmup_frac = 0.01;
  std::int64_t cadence = 500;
};

struct DistillSettings {
  OptimSettings optim;
  int n_layers = 2;
  nn::DistillWeights weights;
};

struct ProbeSettings {
  probe::LogRegConfig logreg;
  double eval_fraction = 0.2;
  std::vector<std::string> tasks;  // empty = all tasks
  std::string curve_task = "gender";
  std::string curve_metric = "roc_auc";
  std::size_t curve_accounts = 2000;
};

struct RunConfig {
  std::uint64_t seed = 42;
  std::size_t threads = 1;
  Paths paths;
  synth::GeneratorConfig generator;
  VocabSettings vocab;
  nn::ModelConfig model;
  train::MaskingConfig masking;
  OptimSettings pretrain;
  DistillSettings distill;
  coles::ColesConfig coles;
  ProbeSettings probe;
  std::vector<std::string> methods = known_methods();

  RunConfig() {
    model.max_context = 128;
    model.d_model = 64;
    model.n_heads = 4;
    model.n_layers = 4;
    model.d_ff = 256;
  }

  std::vector<std::string> task_ids() const {
    if (!probe.tasks.empty()) return probe.tasks;
    std::vector<std::string> out;
    for (const auto& t : all_tasks()) out.emplace_back(t.id);
    return out;
  }

  bool uses(std::string_view method) const {
    return std::find(methods.begin(), methods.end(), method) != methods.end();
  }

  // Generator seed and per-stage seeds all hang off the master seed.
  std::uint64_t stage_seed(std::string_view stage) const { return derive_seed(seed, stage); }

  synth::GeneratorConfig generator_config() const {
    auto g = generator;
    g.seed = stage_seed("generate");
    return g;
  }

  nn::ModelConfig teacher_config(int vocab_size) const {
    auto m = model;
    m.vocab_size = vocab_size;
    return m;
  }

  nn::ModelConfig student_config(int vocab_size) const {
    auto m = teacher_config(vocab_size);
    m.n_layers = distill.n_layers;
    return m;
  }

  train::TrainConfig train_config(const OptimSettings& o) const {
    train::TrainConfig t;
    t.total_steps = o.steps;
    t.batch_size = o.batch_size;
    t.adam.lr = o.lr;
    t.warmup_frac = o.warmup_frac;
    t.cadence = o.cadence;
    t.masking = masking;
    t.distill = distill.weights;
    t.threads = threads;
    return t;
  }

  probe::ProbeConfig probe_config() const {
    probe::ProbeConfig p;
    p.logreg = probe.logreg;
    p.eval_fraction = probe.eval_fraction;
    p.seed = stage_seed("probe");
    return p;
  }

  void validate() const {
    try {
      generator.validate();
      auto m = model;
      m.validate();
      m.n_layers = distill.n_layers;
      m.validate();
      masking.validate();
      train_config(pretrain).validate();
      train_config(distill.optim).validate();
      coles.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what());
    }
    if (threads < 1) throw ConfigError("threads must be >= 1");
    if (vocab.size < 64) throw ConfigError("vocab.size must be >= 64");
    if (vocab.min_frequency < 1) throw ConfigError("vocab.min_frequency must be >= 1");
    if (!(probe.eval_fraction > 0.0 && probe.eval_fraction < 1.0)) throw ConfigError("probe.eval_fraction must be in (0, 1)");
    if (methods.empty()) throw ConfigError("methods must not be empty");
    for (const auto& m : methods) {
      if (!std::count(known_methods().begin(), known_methods().end(), m)) throw ConfigError("unknown method: " + m);
    }
    for (const auto& t : task_ids()) {
      try {
        task_spec(t);
      } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
      }
    }
    try {
      task_spec(probe.curve_task);
      parse_metric(probe.curve_metric);
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what());
    }
  }
};

// ---------------------------------------------------------------------------
// JSON mapping.

namespace detail {

template <typename T>
void read(const nlohmann::json& j, std::string_view key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(std::string(key)).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config key '" + std::string(key) + "': " + e.what());
    }
  }
}

inline void check_keys(const nlohmann::json& j, std::string_view where, std::initializer_list<std::string_view> keys) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
      throw ConfigError("unknown key '" + k + "' in " + std::string(where));
    }
  }
}

inline nlohmann::ordered_json optim_json(const OptimSettings& o) {
  return {{"steps", o.steps}, {"batch_size", o.batch_size}, {"lr", o.lr}, {"warmup_frac", o.warmup_frac},
          {"cadence", o.cadence}};
}

inline void read_optim(const nlohmann::json& j, OptimSettings& o) {
  read(j, "steps", o.steps);
  read(j, "batch_size", o.batch_size);
  read(j, "lr", o.lr);
  read(j, "warmup_frac", o.warmup_frac);
  read(j, "cadence", o.cadence);
}

}  // namespace detail

// Everything that influences outputs, in a fixed key order.
inline nlohmann::ordered_json canonical_json(const RunConfig& c) {
  const auto& g = c.generator;
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["generator"] = {{"n_accounts", g.n_accounts},
                    {"signal_strength", g.signal_strength},
                    {"n_states", g.n_states},
                    {"n_cities", g.n_cities},
                    {"n_fis", g.n_fis},
                    {"n_quantiles", g.n_quantiles},
                    {"n_age_buckets", g.n_age_buckets},
                    {"n_first_names", g.n_first_names},
                    {"p_female", g.p_female},
                    {"p_debit_card", g.p_debit_card},
                    {"p_savings", g.p_savings},
                    {"p_business", g.p_business},
                    {"p_provider_agree", g.p_provider_agree},
                    {"age_weights", g.age_weights},
                    {"rate_nsf", g.rate_nsf},
                    {"rate_stop", g.rate_stop},
                    {"rate_unauth", g.rate_unauth},
                    {"rate_frozen", g.rate_frozen},
                    {"length_log_median", g.length_log_median},
                    {"length_sigma", g.length_sigma},
                    {"max_length", g.max_length},
                    {"signal_slot_rate", g.signal_slot_rate},
                    {"window_start", g.window_start},
                    {"window_seconds", g.window_seconds}};
  j["vocab"] = {{"size", c.vocab.size}, {"min_frequency", c.vocab.min_frequency}};
  j["model"] = {{"max_context", c.model.max_context}, {"d_model", c.model.d_model},
                {"n_heads", c.model.n_heads},         {"n_layers", c.model.n_layers},
                {"d_ff", c.model.d_ff},               {"dropout_rate", c.model.dropout_rate},
                {"layernorm_epsilon", c.model.layernorm_epsilon}};
  j["masking"] = {{"mask_prob", c.masking.mask_prob},
                  {"replace_mask_frac", c.masking.replace_mask_frac},
                  {"replace_random_frac", c.masking.replace_random_frac},
                  {"keep_frac", c.masking.keep_frac}};
  j["pretrain"] = detail::optim_json(c.pretrain);
  auto d = detail::optim_json(c.distill.optim);
  d["n_layers"] = c.distill.n_layers;
  d["temperature"] = c.distill.weights.temperature;
  d["soft"] = c.distill.weights.soft;
  d["hard"] = c.distill.weights.hard;
  j["distill"] = d;
  nlohmann::json cj = c.coles;
  j["coles"] = nlohmann::ordered_json::parse(cj.dump());
  j["probe"] = {{"l2", c.probe.logreg.l2},
                {"max_iter", c.probe.logreg.max_iter},
                {"tol", c.probe.logreg.tol},
                {"eval_fraction", c.probe.eval_fraction},
                {"tasks", c.task_ids()},
                {"curve_task", c.probe.curve_task},
                {"curve_metric", c.probe.curve_metric},
                {"curve_accounts", c.probe.curve_accounts}};
  j["methods"] = c.methods;
  return j;
}

inline std::string config_hash(const RunConfig& c) { return hex64(fnv1a64(canonical_json(c).dump())); }

inline RunConfig from_json(const nlohmann::json& j) {
  RunConfig c;
  detail::check_keys(j, "config", {"seed", "threads", "paths", "generator", "vocab", "model", "student", "masking",
                                   "pretrain", "distill", "coles", "probe", "methods"});
  detail::read(j, "seed", c.seed);
  detail::read(j, "threads", c.threads);
  if (j.contains("paths")) {
    const auto& p = j.at("paths");
    detail::check_keys(p, "paths", {"work_dir", "corpus", "labels", "vocab", "checkpoints", "embeddings", "reports"});
    detail::read(p, "work_dir", c.paths.work_dir);
    detail::read(p, "corpus", c.paths.corpus);
    detail::read(p, "labels", c.paths.labels);
    detail::read(p, "vocab", c.paths.vocab);
    detail::read(p, "checkpoints", c.paths.checkpoints);
    detail::read(p, "embeddings", c.paths.embeddings);
    detail::read(p, "reports", c.paths.reports);
  }
  if (j.contains("generator")) {
    const auto& g = j.at("generator");
    auto& o = c.generator;
    detail::check_keys(g, "generator",
                       {"n_accounts", "signal_strength", "n_states", "n_cities", "n_fis", "n_quantiles",
                        "n_age_buckets", "n_first_names", "p_female", "p_debit_card", "p_savings", "p_business",
                        "p_provider_agree", "age_weights", "rate_nsf", "rate_stop", "rate_unauth", "rate_frozen",
                        "length_log_median", "length_sigma", "max_length", "signal_slot_rate", "window_start",
                        "window_seconds"});
    detail::read(g, "n_accounts", o.n_accounts);
    detail::read(g, "signal_strength", o.signal_strength);
    detail::read(g, "n_states", o.n_states);
    detail::read(g, "n_cities", o.n_cities);
    detail::read(g, "n_fis", o.n_fis);
    detail::read(g, "n_quantiles", o.n_quantiles);
    detail::read(g, "n_age_buckets", o.n_age_buckets);
    detail::read(g, "n_first_names", o.n_first_names);
    detail::read(g, "p_female", o.p_female);
    detail::read(g, "p_debit_card", o.p_debit_card);
    detail::read(g, "p_savings", o.p_savings);
    detail::read(g, "p_business", o.p_business);
    detail::read(g, "p_provider_agree", o.p_provider_agree);
    detail::read(g, "age_weights", o.age_weights);
    detail::read(g, "rate_nsf", o.rate_nsf);
    detail::read(g, "rate_stop", o.rate_stop);
    detail::read(g, "rate_unauth", o.rate_unauth);
    detail::read(g, "rate_frozen", o.rate_frozen);
    detail::read(g, "length_log_median", o.length_log_median);
    detail::read(g, "length_sigma", o.length_sigma);
    detail::read(g, "max_length", o.max_length);
    detail::read(g, "signal_slot_rate", o.signal_slot_rate);
    detail::read(g, "window_start", o.window_start);
    detail::read(g, "window_seconds", o.window_seconds);
  }
  if (j.contains("vocab")) {
    const auto& v = j.at("vocab");
    detail::check_keys(v, "vocab", {"size", "min_frequency"});
    detail::read(v, "size", c.vocab.size);
    detail::read(v, "min_frequency", c.vocab.min_frequency);
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    detail::check_keys(m, "model",
                       {"max_context", "d_model", "n_heads", "n_layers", "d_ff", "dropout_rate", "layernorm_epsilon"});
    detail::read(m, "max_context", c.model.max_context);
    detail::read(m, "d_model", c.model.d_model);
    detail::read(m, "n_heads", c.model.n_heads);
    detail::read(m, "n_layers", c.model.n_layers);
    detail::read(m, "d_ff", c.model.d_ff);
    detail::read(m, "dropout_rate", c.model.dropout_rate);
    detail::read(m, "layernorm_epsilon", c.model.layernorm_epsilon);
  }
  if (j.contains("student")) {
    const auto& s = j.at("student");
    detail::check_keys(s, "student", {"n_layers"});
    detail::read(s, "n_layers", c.distill.n_layers);
  }
  if (j.contains("masking")) {
    const auto& m = j.at("masking");
    detail::check_keys(m, "masking", {"mask_prob", "replace_mask_frac", "replace_random_frac", "keep_frac"});
    detail::read(m, "mask_prob", c.masking.mask_prob);
    detail::read(m, "replace_mask_frac", c.masking.replace_mask_frac);
    detail::read(m, "replace_random_frac", c.masking.replace_random_frac);
    detail::read(m, "keep_frac", c.masking.keep_frac);
  }
  if (j.contains("pretrain")) {
    detail::check_keys(j.at("pretrain"), "pretrain", {"steps", "batch_size", "lr", "warmup_frac", "cadence"});
    detail::read_optim(j.at("pretrain"), c.pretrain);
  }
  if (j.contains("distill")) {
    const auto& d = j.at("distill");
    detail::check_keys(d, "distill",
                       {"steps", "batch_size", "lr", "warmup_frac", "cadence", "n_layers", "temperature", "soft", "hard"});
    detail::read_optim(d, c.distill.optim);
    detail::read(d, "n_layers", c.distill.n_layers);
    detail::read(d, "temperature", c.distill.weights.temperature);
    detail::read(d, "soft", c.distill.weights.soft);
    detail::read(d, "hard", c.distill.weights.hard);
  }
  if (j.contains("coles")) {
    detail::check_keys(j.at("coles"), "coles",
                       {"hidden", "n_subsequences", "min_len", "max_len", "temperature", "repulsion_weight",
                        "batch_accounts", "steps", "lr", "init_std"});
    try {
      c.coles = j.at("coles").get<coles::ColesConfig>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("coles: ") + e.what());
    }
  }
  if (j.contains("probe")) {
    const auto& p = j.at("probe");
    detail::check_keys(p, "probe",
                       {"l2", "max_iter", "tol", "eval_fraction", "tasks", "curve_task", "curve_metric", "curve_accounts"});
    detail::read(p, "l2", c.probe.logreg.l2);
    detail::read(p, "max_iter", c.probe.logreg.max_iter);
    detail::read(p, "tol", c.probe.logreg.tol);
    detail::read(p, "eval_fraction", c.probe.eval_fraction);
    detail::read(p, "tasks", c.probe.tasks);
    detail::read(p, "curve_task", c.probe.curve_task);
    detail::read(p, "curve_metric", c.probe.curve_metric);
    detail::read(p, "curve_accounts", c.probe.curve_accounts);
  }
  detail::read(j, "methods", c.methods);
  c.paths.resolve();
  c.validate();
  return c;
}

inline RunConfig load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  return from_json(j);
}

}  // namespace txlm::config
