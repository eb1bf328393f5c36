#pragma once

// Contrastive sequence encoder over raw transactions (CoLES-style).
//
// Each transaction becomes a feature vector
//   [sign·log1p(|dollars|), is_debit, is_credit, trigram_bag(64)]
// where trigram_bag hashes the character trigrams of the normalized
// description into 64 buckets (frequencies summing to 1). A single-layer GRU
// runs over the features; the final hidden state is the embedding.
//
// Training samples random contiguous subsequences per account. Subsequences of
// the same account are positives, all others in the batch are negatives. With
// cosine similarities s and temperature τ, the per-anchor loss is
//   −mean_{p∈P(i)} s_ip/τ + w_rep · log Σ_{j≠i} exp(s_ij/τ)
// which is the usual softmax-contrastive objective at w_rep = 1.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "txlm/checkpoint.hpp"
#include "txlm/common.hpp"
#include "txlm/grammar.hpp"
#include "txlm/parallel.hpp"
#include "txlm/pretrain.hpp"
#include "txlm/synthgen.hpp"
#include "txlm/transaction.hpp"

namespace txlm::coles {

inline constexpr int kTrigramBuckets = 64;
inline constexpr int kFeatureDim = 3 + kTrigramBuckets;

struct ColesConfig {
  int hidden = 64;
  int n_subsequences = 5;
  int min_len = 10;
  int max_len = 100;
  double temperature = 0.1;
  double repulsion_weight = 1.0;
  int batch_accounts = 16;
  std::int64_t steps = 1000;
  double lr = 1e-3;
  double init_std = 0.1;

  void validate() const {
    if (hidden < 1) throw InvalidArgument("coles hidden size must be >= 1");
    if (n_subsequences < 1) throw InvalidArgument("n_subsequences must be >= 1");
    if (min_len < 1 || min_len > max_len) throw InvalidArgument("need 1 <= min_len <= max_len");
    if (!(temperature > 0.0)) throw InvalidArgument("temperature must be positive");
    if (batch_accounts < 2) throw InvalidArgument("batch_accounts must be >= 2");
    if (steps < 0 || !(lr > 0.0)) throw InvalidArgument("bad coles optimization settings");
  }
};

inline void to_json(nlohmann::json& j, const ColesConfig& c) {
  j = nlohmann::json{{"hidden", c.hidden},
                     {"n_subsequences", c.n_subsequences},
                     {"min_len", c.min_len},
                     {"max_len", c.max_len},
                     {"temperature", c.temperature},
                     {"repulsion_weight", c.repulsion_weight},
                     {"batch_accounts", c.batch_accounts},
                     {"steps", c.steps},
                     {"lr", c.lr},
                     {"init_std", c.init_std}};
}

inline void from_json(const nlohmann::json& j, ColesConfig& c) {
  c.hidden = j.value("hidden", c.hidden);
  c.n_subsequences = j.value("n_subsequences", c.n_subsequences);
  c.min_len = j.value("min_len", c.min_len);
  c.max_len = j.value("max_len", c.max_len);
  c.temperature = j.value("temperature", c.temperature);
  c.repulsion_weight = j.value("repulsion_weight", c.repulsion_weight);
  c.batch_accounts = j.value("batch_accounts", c.batch_accounts);
  c.steps = j.value("steps", c.steps);
  c.lr = j.value("lr", c.lr);
  c.init_std = j.value("init_std", c.init_std);
}

// ---------------------------------------------------------------------------
// Features.

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;

template <typename S>
void transaction_features(const Transaction& t, S* out) {
  std::fill(out, out + kFeatureDim, S(0));
  const double dollars = static_cast<double>(t.amount_cents) / 100.0;
  const double sign = t.direction == Direction::kCredit ? 1.0 : -1.0;
  out[0] = static_cast<S>(sign * std::log1p(dollars));
  out[t.direction == Direction::kDebit ? 1 : 2] = S(1);
  const std::string text = " " + grammar::normalize_description(t.description) + " ";
  if (text.size() < 3) return;
  const std::size_t n = text.size() - 2;
  const S w = S(1) / static_cast<S>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto bucket = fnv1a64(std::string_view(text).substr(i, 3)) % kTrigramBuckets;
    out[3 + bucket] += w;
  }
}

template <typename S>
Mat<S> sequence_features(std::span<const Transaction> txns) {
  Mat<S> x(static_cast<Eigen::Index>(txns.size()), kFeatureDim);
  for (std::size_t i = 0; i < txns.size(); ++i) transaction_features<S>(txns[i], x.row(static_cast<Eigen::Index>(i)).data());
  return x;
}

// ---------------------------------------------------------------------------
// GRU.
//
// Gate order in the stacked matrices is (r, z, n):
//   r = σ(x Wr + h Ur + br),  z = σ(x Wz + h Uz + bz)
//   n = tanh(x Wn + bn + r ⊙ (h Un + cn)),  h' = (1 − z) ⊙ n + z ⊙ h

struct GruLayout {
  std::size_t wx = 0, uh = 0, b = 0, cn = 0, total = 0;
  int in = 0, hidden = 0;

  static GruLayout make(int in, int hidden) {
    GruLayout l;
    l.in = in;
    l.hidden = hidden;
    const auto I = static_cast<std::size_t>(in);
    const auto H = static_cast<std::size_t>(hidden);
    l.wx = 0;
    l.uh = l.wx + I * 3 * H;
    l.b = l.uh + H * 3 * H;
    l.cn = l.b + 3 * H;
    l.total = l.cn + H;
    return l;
  }
};

template <typename S>
struct GruParams {
  GruLayout layout;
  nn::AlignedVector<S> data;

  GruParams() = default;
  explicit GruParams(int hidden) : layout(GruLayout::make(kFeatureDim, hidden)), data(layout.total, S(0)) {}

  int hidden() const { return layout.hidden; }
  std::size_t size() const { return data.size(); }
  void set_zero() { std::fill(data.begin(), data.end(), S(0)); }

  auto wx() const { return Eigen::Map<const Mat<S>>(data.data() + layout.wx, layout.in, 3 * layout.hidden); }
  auto uh() const { return Eigen::Map<const Mat<S>>(data.data() + layout.uh, layout.hidden, 3 * layout.hidden); }
  auto b() const { return Eigen::Map<const RowVec<S>>(data.data() + layout.b, 3 * layout.hidden); }
  auto cn() const { return Eigen::Map<const RowVec<S>>(data.data() + layout.cn, layout.hidden); }
  auto wx() { return Eigen::Map<Mat<S>>(data.data() + layout.wx, layout.in, 3 * layout.hidden); }
  auto uh() { return Eigen::Map<Mat<S>>(data.data() + layout.uh, layout.hidden, 3 * layout.hidden); }
  auto b() { return Eigen::Map<RowVec<S>>(data.data() + layout.b, 3 * layout.hidden); }
  auto cn() { return Eigen::Map<RowVec<S>>(data.data() + layout.cn, layout.hidden); }
};

template <typename S>
GruParams<S> init_gru(int hidden, double init_std, std::uint64_t seed) {
  GruParams<S> p(hidden);
  Rng rng(derive_seed(seed, "coles-init"));
  for (std::size_t i = p.layout.wx; i < p.layout.b; ++i) p.data[i] = static_cast<S>(init_std * rng.normal());
  return p;
}

template <typename S>
struct GruCache {
  Mat<S> x;       // T × F
  Mat<S> h_prev;  // T × H, state entering each step
  Mat<S> r, z, n, hn;
  RowVec<S> h;  // final state
};

namespace detail {

template <typename S>
S sigmoid(S v) {
  return S(1) / (S(1) + std::exp(-v));
}

}  // namespace detail

template <typename S>
GruCache<S> gru_forward(const GruParams<S>& p, Mat<S> x) {
  const Eigen::Index T = x.rows();
  const Eigen::Index H = p.hidden();
  if (T == 0) throw InvalidArgument("gru_forward needs at least one step");
  GruCache<S> c;
  const Mat<S> xg = (x * p.wx()).rowwise() + p.b();
  c.x = std::move(x);
  c.h_prev.resize(T, H);
  c.r.resize(T, H);
  c.z.resize(T, H);
  c.n.resize(T, H);
  c.hn.resize(T, H);
  RowVec<S> h = RowVec<S>::Zero(H);
  const auto U = p.uh();
  for (Eigen::Index t = 0; t < T; ++t) {
    c.h_prev.row(t) = h;
    const RowVec<S> hg = h * U;
    for (Eigen::Index k = 0; k < H; ++k) {
      const S r = detail::sigmoid(xg(t, k) + hg(k));
      const S z = detail::sigmoid(xg(t, H + k) + hg(H + k));
      const S hn = hg(2 * H + k) + p.cn()(k);
      const S n = std::tanh(xg(t, 2 * H + k) + r * hn);
      c.r(t, k) = r;
      c.z(t, k) = z;
      c.hn(t, k) = hn;
      c.n(t, k) = n;
      h(k) = (S(1) - z) * n + z * h(k);
    }
  }
  c.h = h;
  return c;
}

// Backpropagates dL/dh_final through time, accumulating into `grads`.
template <typename S>
void gru_backward(const GruParams<S>& p, const GruCache<S>& c, const RowVec<S>& dh_final, GruParams<S>& grads) {
  const Eigen::Index T = c.x.rows();
  const Eigen::Index H = p.hidden();
  Mat<S> dxg(T, 3 * H);  // grads of the x-side pre-activations (r, z, n)
  Mat<S> dhg(T, 3 * H);  // grads of the h-side products (r, z, hn)
  RowVec<S> dh = dh_final;
  const auto U = p.uh();
  for (Eigen::Index t = T - 1; t >= 0; --t) {
    for (Eigen::Index k = 0; k < H; ++k) {
      const S r = c.r(t, k), z = c.z(t, k), n = c.n(t, k), hn = c.hn(t, k), hp = c.h_prev(t, k);
      const S g = dh(k);
      const S dn_pre = g * (S(1) - z) * (S(1) - n * n);
      const S dz_pre = g * (hp - n) * z * (S(1) - z);
      const S dr_pre = dn_pre * hn * r * (S(1) - r);
      dxg(t, k) = dr_pre;
      dxg(t, H + k) = dz_pre;
      dxg(t, 2 * H + k) = dn_pre;
      dhg(t, k) = dr_pre;
      dhg(t, H + k) = dz_pre;
      dhg(t, 2 * H + k) = dn_pre * r;
      dh(k) = g * z;
    }
    dh.noalias() += dhg.row(t) * U.transpose();
  }
  grads.wx().noalias() += c.x.transpose() * dxg;
  grads.b() += dxg.colwise().sum();
  grads.uh().noalias() += c.h_prev.transpose() * dhg;
  grads.cn() += dhg.rightCols(H).colwise().sum();
}

template <typename S>
RowVec<S> embed(const GruParams<S>& p, std::span<const Transaction> txns) {
  if (txns.empty()) throw InvalidArgument("coles embedding needs at least one transaction");
  return gru_forward(p, sequence_features<S>(txns)).h;
}

// ---------------------------------------------------------------------------
// Subsequence sampling.

struct Subsequence {
  std::size_t slot = 0;  // account position within the batch
  std::size_t begin = 0;
  std::size_t length = 0;
};

struct PairSample {
  std::vector<Subsequence> subs;
  std::size_t skipped_accounts = 0;  // shorter than min_len

  std::vector<std::size_t> positives(std::size_t i) const {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < subs.size(); ++j) {
      if (j != i && subs[j].slot == subs[i].slot) out.push_back(j);
    }
    return out;
  }
  std::vector<std::size_t> negatives(std::size_t i) const {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < subs.size(); ++j) {
      if (subs[j].slot != subs[i].slot) out.push_back(j);
    }
    return out;
  }
};

// `lengths` are the transaction counts of the batch accounts.
inline PairSample sample_pairs(std::span<const std::size_t> lengths, int n_subsequences, int min_len, int max_len,
                               Rng& rng) {
  if (lengths.size() < 2) throw InvalidArgument("coles batch needs at least two accounts");
  PairSample s;
  for (std::size_t slot = 0; slot < lengths.size(); ++slot) {
    const std::size_t n = lengths[slot];
    if (n < static_cast<std::size_t>(min_len)) {
      ++s.skipped_accounts;
      continue;
    }
    const std::size_t hi = std::min(static_cast<std::size_t>(max_len), n);
    for (int k = 0; k < n_subsequences; ++k) {
      const std::size_t len = static_cast<std::size_t>(min_len) + rng.below(hi - static_cast<std::size_t>(min_len) + 1);
      const std::size_t begin = rng.below(n - len + 1);
      s.subs.push_back({slot, begin, len});
    }
  }
  return s;
}

inline PairSample sample_pairs(std::span<const std::size_t> lengths, const ColesConfig& cfg, Rng& rng) {
  return sample_pairs(lengths, cfg.n_subsequences, cfg.min_len, cfg.max_len, rng);
}

// ---------------------------------------------------------------------------
// Contrastive loss on a batch of embeddings.

template <typename S>
struct ContrastiveResult {
  S loss = S(0);
  Mat<S> d_embeddings;  // same shape as the input
  std::size_t anchors = 0;
};

template <typename S>
ContrastiveResult<S> contrastive_loss(const Mat<S>& e, std::span<const std::size_t> group, double temperature,
                                      double repulsion_weight) {
  const Eigen::Index N = e.rows();
  if (static_cast<std::size_t>(N) != group.size()) throw InvalidArgument("one group id per embedding required");
  const S inv_tau = static_cast<S>(1.0 / temperature);
  const S w = static_cast<S>(repulsion_weight);
  Eigen::Matrix<S, Eigen::Dynamic, 1> norms = e.rowwise().norm();
  norms = norms.cwiseMax(S(1e-12));
  const Mat<S> u = norms.cwiseInverse().asDiagonal() * e;
  const Mat<S> sim = (u * u.transpose()) * inv_tau;

  ContrastiveResult<S> r;
  Mat<S> G = Mat<S>::Zero(N, N);  // dL/dsim
  for (Eigen::Index i = 0; i < N; ++i) {
    std::size_t n_pos = 0;
    for (Eigen::Index j = 0; j < N; ++j) n_pos += (j != i && group[j] == group[i]) ? 1 : 0;
    if (n_pos > 0) ++r.anchors;
  }
  if (r.anchors == 0) {
    r.d_embeddings = Mat<S>::Zero(N, e.cols());
    return r;
  }
  const S inv_a = S(1) / static_cast<S>(r.anchors);
  for (Eigen::Index i = 0; i < N; ++i) {
    std::size_t n_pos = 0;
    for (Eigen::Index j = 0; j < N; ++j) n_pos += (j != i && group[j] == group[i]) ? 1 : 0;
    if (n_pos == 0) continue;
    const S inv_p = S(1) / static_cast<S>(n_pos);
    S mx = -std::numeric_limits<S>::infinity();
    for (Eigen::Index j = 0; j < N; ++j) {
      if (j != i) mx = std::max(mx, sim(i, j));
    }
    S z = S(0);
    for (Eigen::Index j = 0; j < N; ++j) {
      if (j != i) z += std::exp(sim(i, j) - mx);
    }
    const S lse = mx + std::log(z);
    S li = w * lse;
    for (Eigen::Index j = 0; j < N; ++j) {
      if (j == i) continue;
      if (group[j] == group[i]) {
        li -= inv_p * sim(i, j);
        G(i, j) -= inv_p * inv_a;
      }
      G(i, j) += w * std::exp(sim(i, j) - lse) * inv_a;
    }
    r.loss += li * inv_a;
  }
  const Mat<S> du = ((G + G.transpose()) * u) * inv_tau;
  r.d_embeddings.resize(N, e.cols());
  for (Eigen::Index i = 0; i < N; ++i) {
    const S radial = du.row(i).dot(u.row(i));
    r.d_embeddings.row(i) = (du.row(i) - radial * u.row(i)) / norms(i);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Training.

struct ColesState {
  ColesConfig config;
  GruParams<float> params;
  std::vector<float> m, v;
  std::int64_t step = 0;
  std::uint64_t seed = 0;
  std::vector<double> loss_history;
  std::size_t skipped_accounts = 0;
};

inline ColesState init_state(const ColesConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ColesState s;
  s.config = cfg;
  s.params = init_gru<float>(cfg.hidden, cfg.init_std, seed);
  s.m.assign(s.params.size(), 0.0f);
  s.v.assign(s.params.size(), 0.0f);
  s.seed = seed;
  return s;
}

namespace detail {

template <typename Accounts>
Mat<float> subsequence_features(const Accounts& batch, const Subsequence& s) {
  const auto& txns = batch[s.slot]->transactions;
  return sequence_features<float>(std::span<const Transaction>(txns.data() + s.begin, s.length));
}

}  // namespace detail

// One optimization step on an already sampled set of subsequences. Returns
// the loss, or NaN (step still counted) when fewer than two accounts survive
// the length filter.
inline double step_on_sample(ColesState& state, std::span<const synth::Account* const> batch,
                             const PairSample& sample, std::size_t threads = 1) {
  const auto& cfg = state.config;
  const std::size_t N = sample.subs.size();
  std::vector<std::size_t> group(N);
  for (std::size_t i = 0; i < N; ++i) group[i] = sample.subs[i].slot;
  if (batch.size() - sample.skipped_accounts < 2) {
    ++state.step;
    return std::numeric_limits<double>::quiet_NaN();
  }

  std::vector<GruCache<float>> caches(N);
  parallel_for(N, threads, [&](std::size_t i) {
    caches[i] = gru_forward(state.params, detail::subsequence_features(batch, sample.subs[i]));
  });
  Mat<float> e(static_cast<Eigen::Index>(N), cfg.hidden);
  for (std::size_t i = 0; i < N; ++i) e.row(static_cast<Eigen::Index>(i)) = caches[i].h;
  const auto cl = contrastive_loss<float>(e, group, cfg.temperature, cfg.repulsion_weight);

  std::vector<GruParams<float>> slot_grads(N, GruParams<float>(cfg.hidden));
  parallel_for(N, threads, [&](std::size_t i) {
    gru_backward(state.params, caches[i], RowVec<float>(cl.d_embeddings.row(static_cast<Eigen::Index>(i))), slot_grads[i]);
  });
  GruParams<float> grads(cfg.hidden);
  for (const auto& g : slot_grads) {
    for (std::size_t k = 0; k < grads.size(); ++k) grads.data[k] += g.data[k];
  }
  ++state.step;
  train::adam_update<float>(state.params.data, grads.data, state.m, state.v, state.step, cfg.lr, {});
  state.loss_history.push_back(static_cast<double>(cl.loss));
  return static_cast<double>(cl.loss);
}

inline double train_step(ColesState& state, std::span<const synth::Account* const> batch, Rng& rng,
                         std::size_t threads = 1) {
  std::vector<std::size_t> lengths;
  for (const auto* a : batch) lengths.push_back(a->transactions.size());
  const PairSample sample = sample_pairs(lengths, state.config, rng);
  state.skipped_accounts += sample.skipped_accounts;
  return step_on_sample(state, batch, sample, threads);
}

// Trains until state.step reaches config.steps (or `stop_at`). Batch k uses
// accounts drawn from a per-epoch permutation and a per-step sampling stream.
inline void train(ColesState& state, std::span<const synth::Account> accounts, std::size_t threads = 1,
                  std::optional<std::int64_t> stop_at = std::nullopt) {
  if (accounts.size() < 2) throw InvalidArgument("coles training needs at least two accounts");
  const auto B = static_cast<std::size_t>(state.config.batch_accounts);
  const std::int64_t end = std::min(stop_at.value_or(state.config.steps), state.config.steps);
  std::uint64_t epoch = ~0ULL;
  std::vector<std::size_t> perm(accounts.size());
  const std::uint64_t order_seed = derive_seed(state.seed, "coles-order");
  const std::uint64_t step_seed = derive_seed(state.seed, "coles-step");
  std::vector<const synth::Account*> batch(std::min(B, accounts.size()));
  while (state.step < end) {
    for (std::size_t j = 0; j < batch.size(); ++j) {
      const std::uint64_t g = static_cast<std::uint64_t>(state.step) * batch.size() + j;
      if (g / accounts.size() != epoch) {
        epoch = g / accounts.size();
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        Rng prng(derive_seed(order_seed, epoch));
        shuffle(perm, prng);
      }
      batch[j] = &accounts[perm[g % accounts.size()]];
    }
    Rng rng(derive_seed(step_seed, static_cast<std::uint64_t>(state.step)));
    train_step(state, batch, rng, threads);
  }
}

// Nearest-neighbour retrieval over a batch with two subsequences per account:
// the fraction of anchors whose most similar other subsequence comes from the
// same account. Chance level is 1 / (2·accounts − 1).
inline double retrieval_accuracy(const GruParams<float>& params, std::span<const synth::Account* const> batch,
                                 int min_len, int max_len, Rng& rng) {
  std::vector<std::size_t> lengths;
  for (const auto* a : batch) lengths.push_back(a->transactions.size());
  const PairSample sample = sample_pairs(lengths, 2, min_len, max_len, rng);
  const auto N = static_cast<Eigen::Index>(sample.subs.size());
  if (N < 4) throw InvalidArgument("retrieval needs at least two usable accounts");
  Mat<float> u(N, params.hidden());
  for (Eigen::Index i = 0; i < N; ++i) {
    u.row(i) = gru_forward(params, detail::subsequence_features(batch, sample.subs[static_cast<std::size_t>(i)])).h;
    u.row(i) /= std::max(u.row(i).norm(), 1e-12f);
  }
  const Mat<float> sim = u * u.transpose();
  std::size_t hit = 0;
  for (Eigen::Index i = 0; i < N; ++i) {
    Eigen::Index best = -1;
    for (Eigen::Index j = 0; j < N; ++j) {
      if (j != i && (best < 0 || sim(i, j) > sim(i, best))) best = j;
    }
    hit += sample.subs[static_cast<std::size_t>(best)].slot == sample.subs[static_cast<std::size_t>(i)].slot ? 1 : 0;
  }
  return static_cast<double>(hit) / static_cast<double>(N);
}

// ---------------------------------------------------------------------------
// Checkpoints.

inline constexpr std::string_view kColesCheckpointKind = "txlm-coles";

inline ckpt::Checkpoint to_checkpoint(const ColesState& s, const nlohmann::json& meta = nlohmann::json::object()) {
  ckpt::Checkpoint c;
  c.header["kind"] = kColesCheckpointKind;
  c.header["coles"] = s.config;
  c.header["feature_dim"] = kFeatureDim;
  c.header["step"] = s.step;
  c.header["seed"] = s.seed;
  c.header["loss_history"] = s.loss_history;
  c.header["skipped_accounts"] = s.skipped_accounts;
  c.header["meta"] = meta;
  c.header["tensors"] = nlohmann::json::array(
      {{{"name", "gru.wx"}, {"rows", s.params.layout.in}, {"cols", 3 * s.params.layout.hidden}, {"offset", s.params.layout.wx}},
       {{"name", "gru.uh"}, {"rows", s.params.layout.hidden}, {"cols", 3 * s.params.layout.hidden}, {"offset", s.params.layout.uh}},
       {{"name", "gru.b"}, {"rows", 1}, {"cols", 3 * s.params.layout.hidden}, {"offset", s.params.layout.b}},
       {{"name", "gru.cn"}, {"rows", 1}, {"cols", s.params.layout.hidden}, {"offset", s.params.layout.cn}}});
  c.sections.push_back({"params", std::vector<float>(s.params.data.begin(), s.params.data.end())});
  c.sections.push_back({"adam_m", s.m});
  c.sections.push_back({"adam_v", s.v});
  return c;
}

inline ColesState from_checkpoint(const ckpt::Checkpoint& c) {
  if (c.header.value("kind", "") != kColesCheckpointKind) throw Error("not a CoLES checkpoint");
  if (c.header.at("feature_dim").get<int>() != kFeatureDim) throw Error("CoLES checkpoint feature size mismatch");
  ColesState s = init_state(c.header.at("coles").get<ColesConfig>(), c.header.at("seed").get<std::uint64_t>());
  s.step = c.header.at("step").get<std::int64_t>();
  s.loss_history = c.header.at("loss_history").get<std::vector<double>>();
  s.skipped_accounts = c.header.at("skipped_accounts").get<std::size_t>();
  auto fill = [&](auto& dst, std::string_view name) {
    const auto& src = c.section(name);
    if (src.size() != dst.size()) throw Error("CoLES checkpoint section '" + std::string(name) + "' has wrong size");
    dst.assign(src.begin(), src.end());
  };
  fill(s.params.data, "params");
  fill(s.m, "adam_m");
  fill(s.v, "adam_v");
  return s;
}

}  // namespace txlm::coles
