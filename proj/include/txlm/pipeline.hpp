#pragma once

// Pipeline stages behind the command-line verbs. Each stage reads its inputs
// from the configured paths, fails with PrerequisiteError when an upstream
// artifact is missing, and writes outputs that depend only on the config
// (threads and paths excluded) so reruns are byte-identical.
//
// Artifacts under paths.*:
//   corpus.jsonl, labels.jsonl          generate
//   vocab.txt                           train-vocab
//   checkpoints/bert.ckpt               pretrain     (+ reports/train_log_bert.csv,
//                                                      probe_log_bert.csv, mlm_eval_bert.json)
//   checkpoints/distilbert.ckpt         distill      (same logs with the distilbert stem)
//   checkpoints/coles.ckpt              train-coles  (+ reports/train_log_coles.csv)
//   embeddings/<method>.csv             embed
//   reports/scores.csv, summary.json    probe
//   reports/tables.md, normalized_scores.csv, rank_histogram.{csv,svg},
//   learning_curve.svg                  report

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "txlm/checkpoint.hpp"
#include "txlm/coles.hpp"
#include "txlm/common.hpp"
#include "txlm/config.hpp"
#include "txlm/corpus_io.hpp"
#include "txlm/encoder.hpp"
#include "txlm/feateng.hpp"
#include "txlm/grammar.hpp"
#include "txlm/metrics.hpp"
#include "txlm/parallel.hpp"
#include "txlm/pretrain.hpp"
#include "txlm/probe.hpp"
#include "txlm/report.hpp"
#include "txlm/synthgen.hpp"
#include "txlm/tasks.hpp"
#include "txlm/tokenizer.hpp"

namespace txlm::pipeline {

// An upstream artifact this stage needs does not exist yet.
class PrerequisiteError : public Error {
 public:
  using Error::Error;
};

using config::RunConfig;
using Matrix = Eigen::MatrixXd;

inline report::Provenance provenance(const RunConfig& c) { return {config::config_hash(c), c.seed}; }

inline void require(const std::string& path, std::string_view what, std::string_view producer) {
  if (!std::filesystem::exists(path)) {
    throw PrerequisiteError(std::string(what) + " not found at " + path + " (run `txlm " + std::string(producer) +
                            "` first)");
  }
}

inline void write_output(const std::string& path, const std::string& contents) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  io::write_file(path, contents);
}

inline void write_checkpoint(const std::string& path, const ckpt::Checkpoint& c) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  ckpt::save(path, c);
}

// ---------------------------------------------------------------------------
// Loading upstream artifacts.

inline std::vector<synth::Account> load_corpus(const RunConfig& c) {
  require(c.paths.corpus, "corpus", "generate");
  return io::read_corpus_file(c.paths.corpus);
}

inline Vocabulary load_vocab(const RunConfig& c) {
  require(c.paths.vocab, "vocabulary", "train-vocab");
  return Vocabulary::from_text(io::read_file(c.paths.vocab));
}

// task id -> labels aligned with `accounts`.
inline std::map<std::string, std::vector<int>> load_labels(const RunConfig& c,
                                                           std::span<const synth::Account> accounts) {
  require(c.paths.labels, "labels", "generate");
  const auto records = io::read_labels_file(c.paths.labels);
  std::map<std::string, const io::LabelRecord*> by_id;
  for (const auto& r : records) by_id[r.account_id] = &r;
  std::map<std::string, std::vector<int>> out;
  for (const auto& a : accounts) {
    auto it = by_id.find(a.account_id);
    if (it == by_id.end()) throw Error("no labels for account " + a.account_id);
    for (const auto& [task, v] : it->second->values) out[task].push_back(v);
  }
  return out;
}

inline std::vector<std::string> account_ids(std::span<const synth::Account> accounts) {
  std::vector<std::string> ids;
  ids.reserve(accounts.size());
  for (const auto& a : accounts) ids.push_back(a.account_id);
  return ids;
}

// ---------------------------------------------------------------------------
// Embeddings.

inline Matrix transformer_embeddings(const nn::Params<float>& p, std::span<const synth::Account> accounts,
                                     const Vocabulary& vocab, std::size_t threads) {
  Matrix out(static_cast<Eigen::Index>(accounts.size()), p.config.d_model);
  parallel_for(accounts.size(), threads, [&](std::size_t i) {
    const auto ids = train::encode_account(accounts[i], vocab, static_cast<std::size_t>(p.config.max_context));
    const auto cache = nn::forward_cached(p, ids, false);
    out.row(static_cast<Eigen::Index>(i)) = cache.h.row(0).cast<double>();
  });
  return out;
}

inline Matrix coles_embeddings(const coles::GruParams<float>& p, std::span<const synth::Account> accounts,
                               std::size_t threads) {
  Matrix out(static_cast<Eigen::Index>(accounts.size()), p.hidden());
  parallel_for(accounts.size(), threads, [&](std::size_t i) {
    out.row(static_cast<Eigen::Index>(i)) = coles::embed(p, accounts[i].transactions).cast<double>();
  });
  return out;
}

inline Matrix feateng_embeddings(std::span<const synth::Account> accounts, std::size_t threads) {
  Matrix out(static_cast<Eigen::Index>(accounts.size()), static_cast<Eigen::Index>(feateng::dimension()));
  parallel_for(accounts.size(), threads, [&](std::size_t i) {
    const auto f = feateng::features(accounts[i].transactions);
    for (std::size_t k = 0; k < f.size(); ++k) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = f[k];
  });
  return out;
}

inline train::TrainState<float> load_encoder(const RunConfig& c, std::string_view method, std::string_view producer) {
  const auto path = c.paths.checkpoint(method);
  require(path, std::string(method) + " checkpoint", producer);
  return train::from_checkpoint<float>(ckpt::load(path));
}

inline coles::ColesState load_coles(const RunConfig& c) {
  const auto path = c.paths.checkpoint("coles");
  require(path, "coles checkpoint", "train-coles");
  return coles::from_checkpoint(ckpt::load(path));
}

// Embeds `accounts` with a trained (or, for feateng, fixed) method.
inline Matrix embed_accounts(const RunConfig& c, std::string_view method, std::span<const synth::Account> accounts) {
  if (method == "bert" || method == "distilbert") {
    const auto vocab = load_vocab(c);
    const auto state = load_encoder(c, method, method == "bert" ? "pretrain" : "distill");
    return transformer_embeddings(state.params, accounts, vocab, c.threads);
  }
  if (method == "coles") return coles_embeddings(load_coles(c).params, accounts, c.threads);
  if (method == "feateng") return feateng_embeddings(accounts, c.threads);
  throw config::ConfigError("unknown method: " + std::string(method));
}

inline std::string embeddings_csv(const Matrix& e, std::span<const std::string> ids, std::string_view method,
                                  const report::Provenance& p) {
  std::string out = "# " + report::provenance_text(p) + " method=" + std::string(method) +
                    " dim=" + std::to_string(e.cols()) + "\naccount_id";
  for (Eigen::Index k = 0; k < e.cols(); ++k) out += ",e" + std::to_string(k);
  out += "\n";
  for (Eigen::Index i = 0; i < e.rows(); ++i) {
    out += ids[static_cast<std::size_t>(i)];
    for (Eigen::Index k = 0; k < e.cols(); ++k) out += "," + report::fmt(e(i, k));
    out += "\n";
  }
  return out;
}

struct EmbeddingFile {
  std::vector<std::string> ids;
  Matrix vectors;
};

inline EmbeddingFile parse_embeddings_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::vector<std::vector<double>> rows;
  EmbeddingFile f;
  std::size_t dim = 0;
  bool header = false;
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#') continue;
    const auto cells = report::split(line, ',');
    if (!header) {
      if (cells.empty() || cells[0] != "account_id") throw Error("embedding file lacks header row");
      dim = cells.size() - 1;
      header = true;
      continue;
    }
    if (cells.size() != dim + 1) throw Error("embedding row for " + cells[0] + " has wrong width");
    f.ids.push_back(cells[0]);
    std::vector<double> v(dim);
    for (std::size_t k = 0; k < dim; ++k) v[k] = report::parse_double(cells[k + 1]);
    rows.push_back(std::move(v));
  }
  f.vectors.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t k = 0; k < dim; ++k) f.vectors(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
  }
  return f;
}

// ---------------------------------------------------------------------------
// generate / train-vocab

inline void cmd_generate(const RunConfig& c) {
  const auto corpus = synth::generate_corpus(c.generator_config(), c.threads);
  const io::Provenance prov{config::config_hash(c), c.seed};
  write_output(c.paths.corpus, io::corpus_to_jsonl(corpus.accounts, prov));
  write_output(c.paths.labels, io::labels_to_jsonl(io::label_records(corpus), prov));
}

inline std::vector<std::string> render_documents(std::span<const synth::Account> accounts, std::size_t threads) {
  std::vector<std::string> lines(accounts.size());
  parallel_for(accounts.size(), threads, [&](std::size_t i) {
    lines[i] = grammar::serialize_document(accounts[i].account_id, accounts[i].transactions).render();
  });
  return lines;
}

inline void cmd_train_vocab(const RunConfig& c) {
  const auto accounts = load_corpus(c);
  const auto lines = render_documents(accounts, c.threads);
  const auto vocab = train_vocab(lines, c.vocab.size, c.vocab.min_frequency);
  write_output(c.paths.vocab, vocab.to_text(report::provenance_text(provenance(c))));
}

// ---------------------------------------------------------------------------
// pretrain / distill

struct EncodedCorpus {
  std::vector<train::IdSeq> train;
  std::vector<train::IdSeq> heldout;
};

inline EncodedCorpus encode_for_training(std::span<const synth::Account> accounts, const Vocabulary& vocab,
                                         std::size_t max_context, std::size_t threads) {
  const auto all = train::encode_accounts(accounts, vocab, max_context, threads);
  EncodedCorpus e;
  for (std::size_t i = 0; i < accounts.size(); ++i) {
    (train::is_heldout(accounts[i].account_id) ? e.heldout : e.train).push_back(all[i]);
  }
  if (e.train.empty()) throw config::ConfigError("corpus too small: no training sequences");
  if (e.heldout.empty()) throw config::ConfigError("corpus too small: no held-out sequences");
  return e;
}

struct MlmPoint {
  std::int64_t step = 0;
  train::MlmEval eval;
};

inline nlohmann::ordered_json mlm_point_json(const MlmPoint& m) {
  return {{"step", m.step},
          {"loss", m.eval.loss},
          {"accuracy", m.eval.accuracy},
          {"majority_baseline", m.eval.majority_baseline},
          {"n_targets", m.eval.n_targets}};
}

inline MlmPoint mlm_point_from_json(const nlohmann::json& j) {
  MlmPoint m;
  m.step = j.at("step").get<std::int64_t>();
  m.eval.loss = j.at("loss").get<double>();
  m.eval.accuracy = j.at("accuracy").get<double>();
  m.eval.majority_baseline = j.at("majority_baseline").get<double>();
  m.eval.n_targets = j.at("n_targets").get<std::int64_t>();
  return m;
}

// Probe score of the curve task on the first curve_accounts accounts.
class CurveProbe {
 public:
  CurveProbe(const RunConfig& c, std::span<const synth::Account> accounts, const Vocabulary& vocab)
      : cfg_(c), vocab_(vocab), task_(task_spec(c.probe.curve_task)), metric_(parse_metric(c.probe.curve_metric)) {
    const std::size_t n = std::min(c.probe.curve_accounts, accounts.size());
    accounts_ = accounts.subspan(0, n);
    ids_ = account_ids(accounts_);
    labels_ = load_labels(c, accounts_).at(std::string(task_.id));
  }

  report::ProbePoint at(const nn::Params<float>& p, std::int64_t step) const {
    const Matrix x = transformer_embeddings(p, accounts_, vocab_, cfg_.threads);
    const Metric wanted[] = {metric_};
    const auto r = probe::run_probe(x, ids_, labels_, task_, cfg_.probe_config(), wanted);
    return {step, std::string(task_.id), std::string(to_string(metric_)), r.scores.at(0).second};
  }

 private:
  const RunConfig& cfg_;
  const Vocabulary& vocab_;
  const TaskSpec& task_;
  Metric metric_;
  std::span<const synth::Account> accounts_;
  std::vector<std::string> ids_;
  std::vector<int> labels_;
};

struct EncoderRun {
  train::TrainState<float> state;
  std::vector<report::ProbePoint> curve;
  std::vector<MlmPoint> mlm;
};

// Trains `method` ("bert" or "distilbert"), ticking a probe, a held-out MLM
// evaluation and a checkpoint every cadence steps. With resume, continues from
// an existing checkpoint of the same config.
inline EncoderRun train_encoder(const RunConfig& c, std::string_view method, const nn::Params<float>* teacher,
                                bool resume) {
  const bool distill = teacher != nullptr;
  const auto& optim = distill ? c.distill.optim : c.pretrain;
  const auto accounts = load_corpus(c);
  const auto vocab = load_vocab(c);
  const auto data = encode_for_training(accounts, vocab, static_cast<std::size_t>(c.model.max_context), c.threads);
  const CurveProbe curve_probe(c, accounts, vocab);
  const auto tc = c.train_config(optim);
  const auto model_cfg = distill ? c.student_config(vocab.size()) : c.teacher_config(vocab.size());
  const std::string m(method);
  const std::string ckpt_path = c.paths.checkpoint(m);
  const std::string hash = config::config_hash(c);
  const std::uint64_t eval_seed = c.stage_seed("heldout");

  EncoderRun run;
  if (resume && std::filesystem::exists(ckpt_path)) {
    const auto ck = ckpt::load(ckpt_path);
    if (ck.header.at("meta").value("config_hash", "") != hash) {
      throw config::ConfigError("cannot resume " + ckpt_path + ": written by a different config");
    }
    run.state = train::from_checkpoint<float>(ck);
    for (const auto& j : ck.header.at("meta").at("probe_curve")) run.curve.push_back(j.get<report::ProbePoint>());
    for (const auto& j : ck.header.at("meta").at("mlm_curve")) run.mlm.push_back(mlm_point_from_json(j));
  } else {
    run.state = train::TrainState<float>(nn::init_params<float>(model_cfg, c.stage_seed(m + "-init")),
                                         c.stage_seed(m + "-train"));
    run.curve.push_back(curve_probe.at(run.state.params, 0));
    run.mlm.push_back({0, train::evaluate_mlm(run.state.params, data.heldout, vocab, c.masking, eval_seed, c.threads)});
  }

  auto meta = [&] {
    nlohmann::json j;
    j["config_hash"] = hash;
    j["method"] = m;
    j["probe_curve"] = run.curve;
    auto& mc = j["mlm_curve"] = nlohmann::json::array();
    for (const auto& p : run.mlm) mc.push_back(nlohmann::json::parse(mlm_point_json(p).dump()));
    return j;
  };

  train::LoopHooks<float> hooks;
  hooks.on_tick = [&](const train::TrainState<float>& s) {
    run.curve.push_back(curve_probe.at(s.params, s.step));
    run.mlm.push_back({s.step, train::evaluate_mlm(s.params, data.heldout, vocab, c.masking, eval_seed, c.threads)});
    write_checkpoint(ckpt_path, train::to_checkpoint(s, meta()));
  };
  train::train_loop(run.state, data.train, vocab, tc, hooks, teacher);
  if (run.mlm.back().step != run.state.step) {
    run.mlm.push_back({run.state.step, train::evaluate_mlm(run.state.params, data.heldout, vocab, c.masking, eval_seed,
                                                           c.threads)});
    run.curve.push_back(curve_probe.at(run.state.params, run.state.step));
  }
  write_checkpoint(ckpt_path, train::to_checkpoint(run.state, meta()));

  const auto prov = provenance(c);
  std::vector<train::StepRecord> records;
  for (std::size_t i = 0; i < run.state.loss_history.size(); ++i) {
    const auto step = static_cast<std::int64_t>(i);
    records.push_back({step + 1, run.state.loss_history[i],
                       train::learning_rate(step, tc.total_steps, tc.adam.lr, tc.warmup_frac)});
  }
  write_output(c.paths.report("train_log_" + m + ".csv"), report::training_log_csv(records, prov));
  write_output(c.paths.report("probe_log_" + m + ".csv"), report::probe_log_csv(run.curve, prov));
  nlohmann::ordered_json mj;
  mj["config_hash"] = prov.config_hash;
  mj["seed"] = prov.seed;
  mj["method"] = m;
  mj["n_heldout"] = data.heldout.size();
  mj["ln_vocab"] = std::log(static_cast<double>(vocab.size()));
  auto& pts = mj["evaluations"] = nlohmann::ordered_json::array();
  for (const auto& p : run.mlm) pts.push_back(mlm_point_json(p));
  write_output(c.paths.report("mlm_eval_" + m + ".json"), mj.dump(2) + "\n");
  return run;
}

inline EncoderRun cmd_pretrain(const RunConfig& c, bool resume = false) {
  return train_encoder(c, "bert", nullptr, resume);
}

inline EncoderRun cmd_distill(const RunConfig& c, bool resume = false) {
  const auto teacher = load_encoder(c, "bert", "pretrain");
  return train_encoder(c, "distilbert", &teacher.params, resume);
}

// ---------------------------------------------------------------------------
// train-coles

inline coles::ColesState cmd_train_coles(const RunConfig& c) {
  const auto accounts = load_corpus(c);
  auto state = coles::init_state(c.coles, c.stage_seed("coles"));
  coles::train(state, accounts, c.threads);
  write_checkpoint(c.paths.checkpoint("coles"), coles::to_checkpoint(state, {{"config_hash", config::config_hash(c)}}));
  std::vector<train::StepRecord> records;
  for (std::size_t i = 0; i < state.loss_history.size(); ++i) {
    records.push_back({static_cast<std::int64_t>(i + 1), state.loss_history[i], c.coles.lr});
  }
  write_output(c.paths.report("train_log_coles.csv"), report::training_log_csv(records, provenance(c)));
  return state;
}

// ---------------------------------------------------------------------------
// embed / probe / report

inline void cmd_embed(const RunConfig& c, std::string_view method) {
  if (!c.uses(method)) throw config::ConfigError("method '" + std::string(method) + "' is not in the config's methods");
  const auto accounts = load_corpus(c);
  const Matrix e = embed_accounts(c, method, accounts);
  write_output(c.paths.embedding(method), embeddings_csv(e, account_ids(accounts), method, provenance(c)));
}

// Probes every (method, task) pair on already-aligned features.
inline probe::ScoreTable probe_all(const RunConfig& c, const std::map<std::string, Matrix>& features,
                                   std::span<const std::string> ids,
                                   const std::map<std::string, std::vector<int>>& labels) {
  struct Job {
    std::string method, task;
  };
  std::vector<Job> jobs;
  for (const auto& m : c.methods) {
    for (const auto& t : c.task_ids()) jobs.push_back({m, t});
  }
  std::vector<std::vector<std::pair<Metric, double>>> results(jobs.size());
  const auto pc = c.probe_config();
  parallel_for(jobs.size(), c.threads, [&](std::size_t i) {
    const auto& job = jobs[i];
    results[i] = probe::run_probe(features.at(job.method), ids, labels.at(job.task), task_spec(job.task), pc).scores;
  });
  probe::ScoreTable table;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    for (const auto& [metric, score] : results[i]) table.add(jobs[i].method, jobs[i].task, std::string(to_string(metric)), score);
  }
  const auto order = c.task_ids();
  table.finalize(order);
  return table;
}

inline probe::ScoreTable cmd_probe(const RunConfig& c) {
  const auto accounts = load_corpus(c);
  const auto labels = load_labels(c, accounts);
  const auto ids = account_ids(accounts);
  std::map<std::string, Matrix> features;
  for (const auto& m : c.methods) {
    const auto path = c.paths.embedding(m);
    require(path, m + " embeddings", "embed --method " + m);
    auto f = parse_embeddings_csv(io::read_file(path));
    if (f.ids != ids) throw Error(m + " embeddings do not match the corpus accounts; re-run `txlm embed`");
    features[m] = std::move(f.vectors);
  }
  const auto table = probe_all(c, features, ids, labels);
  const auto prov = provenance(c);
  write_output(c.paths.report("scores.csv"), report::scores_csv(table, prov));
  write_output(c.paths.report("summary.json"), report::summary_json(table, c.methods, prov).dump(2) + "\n");
  return table;
}

inline void cmd_report(const RunConfig& c) {
  const auto scores_path = c.paths.report("scores.csv");
  require(scores_path, "score table", "probe");
  const auto table = report::parse_scores_csv(io::read_file(scores_path));
  const auto prov = provenance(c);
  const auto hist = table.rank_distribution();
  write_output(c.paths.report("tables.md"), report::normalized_tables_markdown(table, c.methods, prov));
  write_output(c.paths.report("normalized_scores.csv"), report::normalized_table_csv(table, c.methods, prov));
  write_output(c.paths.report("rank_histogram.csv"), report::rank_histogram_csv(hist, prov));
  write_output(c.paths.report("rank_histogram.svg"), report::rank_histogram_svg(hist, c.methods, prov));

  std::map<std::string, std::vector<std::pair<double, double>>> series;
  for (const std::string m : {"bert", "distilbert"}) {
    if (!c.uses(m)) continue;
    const auto path = c.paths.report("probe_log_" + m + ".csv");
    require(path, m + " probe log", m == "bert" ? "pretrain" : "distill");
    auto& s = series[m];
    for (const auto& p : report::parse_probe_log(io::read_file(path))) s.emplace_back(static_cast<double>(p.step), p.score);
  }
  write_output(c.paths.report("learning_curve.svg"),
               report::learning_curve_svg(series, "Probe score during pretraining (" + c.probe.curve_task + ")",
                                          c.probe.curve_metric, prov));
}

// Every stage in order.
inline void cmd_all(const RunConfig& c) {
  cmd_generate(c);
  cmd_train_vocab(c);
  if (c.uses("bert") || c.uses("distilbert")) cmd_pretrain(c);
  if (c.uses("distilbert")) cmd_distill(c);
  if (c.uses("coles")) cmd_train_coles(c);
  for (const auto& m : c.methods) cmd_embed(c, m);
  cmd_probe(c);
  cmd_report(c);
}

}  // namespace txlm::pipeline
