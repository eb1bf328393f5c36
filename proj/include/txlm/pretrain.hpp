#pragma once

// Masked-language-model pretraining and distillation.
//
// Every random choice inside a step (batch membership, masking, dropout) is
// derived from (seed, step, slot) rather than drawn from a running stream, so
// stopping after N steps, checkpointing and resuming reproduces an
// uninterrupted run bit-for-bit. Per-slot gradients are summed in slot order,
// which makes the result independent of the worker count.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "txlm/checkpoint.hpp"
#include "txlm/common.hpp"
#include "txlm/encoder.hpp"
#include "txlm/grammar.hpp"
#include "txlm/losses.hpp"
#include "txlm/parallel.hpp"
#include "txlm/synthgen.hpp"
#include "txlm/tokenizer.hpp"

namespace txlm::train {

// ---------------------------------------------------------------------------
// Data.

// Real (unpadded) token ids of one encoded document.
using IdSeq = std::vector<int>;

inline IdSeq real_prefix(const TokenSequence& seq) {
  return IdSeq(seq.ids.begin(), seq.ids.begin() + static_cast<std::ptrdiff_t>(seq.length()));
}

inline IdSeq encode_account(const synth::Account& a, const Vocabulary& vocab, std::size_t max_context) {
  const auto doc = grammar::serialize_document(a.account_id, a.transactions, vocab.buckets());
  return real_prefix(encode(doc.render(), vocab, max_context));
}

inline std::vector<IdSeq> encode_accounts(std::span<const synth::Account> accounts, const Vocabulary& vocab,
                                          std::size_t max_context, std::size_t threads = 1) {
  std::vector<IdSeq> out(accounts.size());
  parallel_for(accounts.size(), threads,
               [&](std::size_t i) { out[i] = encode_account(accounts[i], vocab, max_context); });
  return out;
}

// Fixed 5% held-out split by account id.
inline bool is_heldout(std::string_view account_id, double fraction = 0.05) {
  const std::uint64_t h = derive_seed(fnv1a64(account_id), "mlm-heldout");
  return static_cast<double>(h % 1000000) < fraction * 1e6;
}

// ---------------------------------------------------------------------------
// Masking.

struct MaskingConfig {
  double mask_prob = 0.15;
  double replace_mask_frac = 0.8;
  double replace_random_frac = 0.1;
  double keep_frac = 0.1;

  void validate() const {
    if (!(mask_prob > 0.0 && mask_prob < 1.0)) throw InvalidArgument("mask_prob must be in (0, 1)");
    if (replace_mask_frac < 0 || replace_random_frac < 0 || keep_frac < 0 ||
        std::abs(replace_mask_frac + replace_random_frac + keep_frac - 1.0) > 1e-9) {
      throw InvalidArgument("masking fractions must be non-negative and sum to 1");
    }
  }
};

struct MaskedSequence {
  IdSeq ids;                   // corrupted input
  std::vector<int> positions;  // selected positions, ascending
  std::vector<int> targets;    // original ids at those positions
};

inline int random_maskable_id(const Vocabulary& vocab, Rng& rng) {
  for (;;) {
    const int id = static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab.size())));
    if (vocab.is_maskable(id)) return id;
  }
}

inline MaskedSequence apply_masking(std::span<const int> ids, const Vocabulary& vocab, const MaskingConfig& cfg,
                                    Rng& rng) {
  MaskedSequence out;
  out.ids.assign(ids.begin(), ids.end());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!vocab.is_maskable(ids[i])) continue;
    if (!rng.bernoulli(cfg.mask_prob)) continue;
    out.positions.push_back(static_cast<int>(i));
    out.targets.push_back(ids[i]);
    const double u = rng.uniform();
    if (u < cfg.replace_mask_frac) {
      out.ids[i] = token_id::kMask;
    } else if (u < cfg.replace_mask_frac + cfg.replace_random_frac) {
      out.ids[i] = random_maskable_id(vocab, rng);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer.

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam update; `t` is the 1-based step number.
template <typename S>
void adam_update(std::span<S> x, std::span<const S> g, std::span<S> m, std::span<S> v, std::int64_t t, double lr,
                 const AdamConfig& cfg) {
  if (g.size() != x.size() || m.size() != x.size() || v.size() != x.size()) {
    throw InvalidArgument("adam: shape mismatch");
  }
  const S b1 = static_cast<S>(cfg.beta1);
  const S b2 = static_cast<S>(cfg.beta2);
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  const S step_size = static_cast<S>(lr / bc1);
  const S inv_sqrt_bc2 = static_cast<S>(1.0 / std::sqrt(bc2));
  const S eps = static_cast<S>(cfg.eps);
  for (std::size_t i = 0; i < x.size(); ++i) {
    m[i] = b1 * m[i] + (S(1) - b1) * g[i];
    v[i] = b2 * v[i] + (S(1) - b2) * g[i] * g[i];
    x[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + eps);
  }
}

template <typename S>
struct TrainState {
  nn::Params<S> params;
  std::vector<S> m;
  std::vector<S> v;
  std::int64_t step = 0;
  std::uint64_t seed = 0;  // root of every per-step stream
  std::vector<double> loss_history;

  TrainState() = default;
  TrainState(nn::Params<S> p, std::uint64_t seed_)
      : params(std::move(p)), m(params.size(), S(0)), v(params.size(), S(0)), seed(seed_) {}
};

template <typename S>
void adam_step(TrainState<S>& state, const nn::Params<S>& grads, double lr, const AdamConfig& cfg) {
  if (grads.size() != state.params.size()) throw InvalidArgument("adam: gradient shape mismatch");
  ++state.step;
  adam_update<S>(state.params.data, grads.data, state.m, state.v, state.step, lr, cfg);
}

// Linear warmup over the first warmup_frac of steps, then linear decay to 0.
inline double learning_rate(std::int64_t step, std::int64_t total_steps, double base, double warmup_frac) {
  const std::int64_t warm = std::max<std::int64_t>(1, std::llround(warmup_frac * static_cast<double>(total_steps)));
  if (step < warm) return base * static_cast<double>(step + 1) / static_cast<double>(warm);
  if (total_steps <= warm) return base;
  const double rest = static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warm);
  return base * std::max(0.0, rest);
}

// ---------------------------------------------------------------------------
// Held-out evaluation.

struct MlmEval {
  double loss = 0.0;
  double accuracy = 0.0;           // top-1 over masked targets
  double majority_baseline = 0.0;  // frequency of the most common target id
  std::int64_t n_targets = 0;
};

template <typename S>
MlmEval evaluate_mlm(const nn::Params<S>& p, std::span<const IdSeq> seqs, const Vocabulary& vocab,
                     const MaskingConfig& masking, std::uint64_t seed, std::size_t threads = 1) {
  struct Part {
    double loss = 0.0;
    std::int64_t correct = 0;
    std::vector<int> targets;
  };
  std::vector<Part> parts(seqs.size());
  const std::uint64_t root = derive_seed(seed, "heldout-masking");
  parallel_for(seqs.size(), threads, [&](std::size_t i) {
    Rng rng(derive_seed(root, i));
    const auto ms = apply_masking(seqs[i], vocab, masking, rng);
    if (ms.positions.empty()) return;
    const auto cache = nn::forward_cached(p, ms.ids, false);
    const nn::Mat<S> logits = nn::mlm_logits(p, cache.h, ms.positions);
    const auto ce = nn::cross_entropy<S>(logits, ms.targets, S(1));
    parts[i].loss = static_cast<double>(ce.loss);
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      Eigen::Index best = 0;
      logits.row(r).maxCoeff(&best);
      if (static_cast<int>(best) == ms.targets[static_cast<std::size_t>(r)]) ++parts[i].correct;
    }
    parts[i].targets = ms.targets;
  });
  MlmEval e;
  std::map<int, std::int64_t> freq;
  std::int64_t correct = 0;
  for (const auto& part : parts) {
    e.loss += part.loss;
    correct += part.correct;
    for (int t : part.targets) ++freq[t];
    e.n_targets += static_cast<std::int64_t>(part.targets.size());
  }
  if (e.n_targets == 0) throw InvalidArgument("held-out set produced no masked targets");
  std::int64_t top = 0;
  for (const auto& [id, n] : freq) top = std::max(top, n);
  const auto n = static_cast<double>(e.n_targets);
  e.loss /= n;
  e.accuracy = static_cast<double>(correct) / n;
  e.majority_baseline = static_cast<double>(top) / n;
  return e;
}

// ---------------------------------------------------------------------------
// Training loop.

struct TrainConfig {
  std::int64_t total_steps = 10000;
  int batch_size = 32;
  AdamConfig adam;
  double warmup_frac = 0.01;
  std::int64_t cadence = 500;  // probe / checkpoint / held-out evaluation interval
  MaskingConfig masking;
  nn::DistillWeights distill;
  std::size_t threads = 1;

  void validate() const {
    if (total_steps < 1) throw InvalidArgument("total_steps must be >= 1");
    if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
    if (cadence < 1) throw InvalidArgument("cadence must be >= 1");
    if (!(adam.lr > 0.0)) throw InvalidArgument("learning rate must be positive");
    if (warmup_frac < 0.0 || warmup_frac >= 1.0) throw InvalidArgument("warmup_frac must be in [0, 1)");
    masking.validate();
  }
};

struct StepRecord {
  std::int64_t step = 0;  // 1-based, after the update
  double loss = 0.0;
  double lr = 0.0;
};

template <typename S>
struct LoopHooks {
  std::function<void(const StepRecord&)> on_step;
  // Called after every `cadence` steps with a read-only view of the state.
  std::function<void(const TrainState<S>&)> on_tick;
};

namespace detail {

// Sample order: one seeded permutation of the training set per epoch.
class BatchOrder {
 public:
  BatchOrder(std::size_t n, std::uint64_t seed) : n_(n), seed_(derive_seed(seed, "batch-order")) {
    if (n == 0) throw InvalidArgument("training set is empty");
  }

  std::size_t at(std::uint64_t global_index) {
    const std::uint64_t epoch = global_index / n_;
    if (epoch != epoch_ || perm_.empty()) {
      perm_.resize(n_);
      for (std::size_t i = 0; i < n_; ++i) perm_[i] = i;
      Rng rng(derive_seed(seed_, epoch));
      shuffle(perm_, rng);
      epoch_ = epoch;
    }
    return perm_[global_index % n_];
  }

 private:
  std::size_t n_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::vector<std::size_t> perm_;
};

}  // namespace detail

// Advances `state` up to `stop_at` (default: cfg.total_steps). With a teacher,
// the loss is the distillation objective against the teacher's logits at the
// same masked positions; otherwise plain MLM cross-entropy.
template <typename S>
void train_loop(TrainState<S>& state, std::span<const IdSeq> data, const Vocabulary& vocab, const TrainConfig& cfg,
                const LoopHooks<S>& hooks = {}, const nn::Params<S>* teacher = nullptr,
                std::optional<std::int64_t> stop_at = std::nullopt) {
  cfg.validate();
  if (state.params.config.vocab_size != vocab.size()) {
    throw InvalidArgument("model vocab_size does not match the vocabulary");
  }
  if (teacher && teacher->config.vocab_size != vocab.size()) {
    throw InvalidArgument("teacher vocab_size does not match the vocabulary");
  }
  const std::int64_t end = std::min(stop_at.value_or(cfg.total_steps), cfg.total_steps);
  const auto B = static_cast<std::size_t>(cfg.batch_size);
  detail::BatchOrder order(data.size(), state.seed);
  const std::uint64_t step_root = derive_seed(state.seed, "train-step");

  std::vector<nn::Params<S>> slot_grads(B, nn::Params<S>(state.params.config));
  std::vector<S> slot_loss(B, S(0));
  std::vector<MaskedSequence> masked(B);
  nn::Params<S> grads(state.params.config);

  while (state.step < end) {
    const std::int64_t step = state.step;
    const std::uint64_t seed_s = derive_seed(step_root, static_cast<std::uint64_t>(step));
    std::size_t total_targets = 0;
    for (std::size_t j = 0; j < B; ++j) {
      const std::size_t idx = order.at(static_cast<std::uint64_t>(step) * B + j);
      Rng rng(derive_seed(derive_seed(seed_s, j), "mask"));
      masked[j] = apply_masking(data[idx], vocab, cfg.masking, rng);
      total_targets += masked[j].positions.size();
    }
    const double lr = learning_rate(step, cfg.total_steps, cfg.adam.lr, cfg.warmup_frac);
    if (total_targets == 0) {
      ++state.step;  // nothing to learn from; skip the update
      continue;
    }
    const S normalizer = static_cast<S>(total_targets);
    parallel_for(B, cfg.threads, [&](std::size_t j) {
      auto& g = slot_grads[j];
      g.set_zero();
      slot_loss[j] = S(0);
      const auto& ms = masked[j];
      if (ms.positions.empty()) return;
      nn::LossSpec<S> spec;
      spec.positions = ms.positions;
      spec.targets = ms.targets;
      spec.normalizer = normalizer;
      if (teacher) {
        const auto tc = nn::forward_cached(*teacher, ms.ids, false);
        spec.teacher_logits = nn::mlm_logits(*teacher, tc.h, ms.positions);
        spec.distill = cfg.distill;
      }
      slot_loss[j] = nn::accumulate_gradients(state.params, ms.ids, spec, true,
                                              derive_seed(derive_seed(seed_s, j), "dropout"), g);
    });
    grads.set_zero();
    double loss = 0.0;
    for (std::size_t j = 0; j < B; ++j) {
      grads += slot_grads[j];
      loss += static_cast<double>(slot_loss[j]);
    }
    adam_step(state, grads, lr, cfg.adam);
    state.loss_history.push_back(loss);
    if (hooks.on_step) hooks.on_step({state.step, loss, lr});
    if (hooks.on_tick && state.step % cfg.cadence == 0) hooks.on_tick(state);
  }
}

// ---------------------------------------------------------------------------
// Checkpoints.

inline constexpr std::string_view kEncoderCheckpointKind = "txlm-encoder";

template <typename S>
ckpt::Checkpoint to_checkpoint(const TrainState<S>& state, const nlohmann::json& meta = nlohmann::json::object()) {
  ckpt::Checkpoint c;
  c.header["kind"] = kEncoderCheckpointKind;
  c.header["model"] = state.params.config;
  c.header["step"] = state.step;
  c.header["seed"] = state.seed;
  c.header["loss_history"] = state.loss_history;
  c.header["meta"] = meta;
  auto& tensors = c.header["tensors"] = nlohmann::json::array();
  for (const auto& t : state.params.layout.tensors) {
    tensors.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}, {"offset", t.offset}});
  }
  auto as_float = [](const auto& v) { return std::vector<float>(v.begin(), v.end()); };
  c.sections.push_back({"params", as_float(state.params.data)});
  c.sections.push_back({"adam_m", as_float(state.m)});
  c.sections.push_back({"adam_v", as_float(state.v)});
  return c;
}

template <typename S>
TrainState<S> from_checkpoint(const ckpt::Checkpoint& c) {
  if (c.header.value("kind", "") != kEncoderCheckpointKind) throw Error("not an encoder checkpoint");
  const auto config = c.header.at("model").get<nn::ModelConfig>();
  config.validate();
  TrainState<S> s(nn::Params<S>(config), c.header.at("seed").get<std::uint64_t>());
  s.step = c.header.at("step").get<std::int64_t>();
  s.loss_history = c.header.at("loss_history").get<std::vector<double>>();
  auto fill = [&](auto& dst, std::string_view name) {
    const auto& src = c.section(name);
    if (src.size() != dst.size()) throw Error("checkpoint section '" + std::string(name) + "' has wrong size");
    std::transform(src.begin(), src.end(), dst.begin(), [](float x) { return static_cast<S>(x); });
  };
  fill(s.params.data, "params");
  fill(s.m, "adam_m");
  fill(s.v, "adam_v");
  return s;
}

}  // namespace txlm::train
