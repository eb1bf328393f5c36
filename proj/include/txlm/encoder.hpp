#pragma once

// Bidirectional transformer encoder with hand-written backward pass.
//
// Pre-norm blocks:   x += Attn(LN1(x));  x += FFN(LN2(x));  h = LN_f(x)
// FFN uses exact (erf) GELU. The MLM head shares the token embedding table:
//   logits = h · Eᵀ + mlm_bias
//
// Padding is a suffix of every sequence and is excluded from attention as
// keys, so only the real prefix is computed. Hidden states at padded
// positions are reported as zeros.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/SpecialFunctions>
#include <nlohmann/json.hpp>

#include "txlm/common.hpp"
#include "txlm/tokenizer.hpp"

namespace txlm::nn {

struct ModelConfig {
  int vocab_size = 8192;
  int max_context = 512;
  int d_model = 128;
  int n_heads = 4;
  int n_layers = 4;
  int d_ff = 512;
  double dropout_rate = 0.1;
  double layernorm_epsilon = 1e-5;

  int d_head() const { return d_model / n_heads; }

  void validate() const {
    if (vocab_size <= 0 || max_context <= 0 || d_model <= 0 || n_heads <= 0 || n_layers <= 0 || d_ff <= 0) {
      throw InvalidArgument("model dimensions must be positive");
    }
    if (d_model % n_heads != 0) throw InvalidArgument("d_model must be divisible by n_heads");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw InvalidArgument("dropout_rate must be in [0, 1)");
    if (layernorm_epsilon <= 0.0) throw InvalidArgument("layernorm_epsilon must be positive");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"vocab_size", c.vocab_size}, {"max_context", c.max_context}, {"d_model", c.d_model},
                     {"n_heads", c.n_heads},       {"n_layers", c.n_layers},       {"d_ff", c.d_ff},
                     {"dropout_rate", c.dropout_rate}, {"layernorm_epsilon", c.layernorm_epsilon}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.max_context = j.value("max_context", c.max_context);
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
  c.layernorm_epsilon = j.value("layernorm_epsilon", c.layernorm_epsilon);
}

enum class TensorKind { kWeight, kBias, kGain };

struct TensorInfo {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;
  TensorKind kind = TensorKind::kWeight;

  std::size_t size() const { return rows * cols; }
};

struct LayerOffsets {
  std::size_t ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
};

// Flat parameter layout. Order:
//   token_embedding [V×d], position_embedding [T×d],
//   per layer: ln1.gain, ln1.bias, attn.wq [d×d], attn.bq, attn.wk, attn.bk,
//              attn.wv, attn.bv, attn.wo, attn.bo, ln2.gain, ln2.bias,
//              ffn.w1 [d×ff], ffn.b1, ffn.w2 [ff×d], ffn.b2,
//   final_ln.gain, final_ln.bias, mlm.bias [V].
// Weight matrices are row-major [in×out] (y = x·W).
struct Layout {
  std::size_t tok_emb = 0, pos_emb = 0;
  std::vector<LayerOffsets> layers;
  std::size_t lnf_g = 0, lnf_b = 0, mlm_bias = 0;
  std::size_t total = 0;
  std::vector<TensorInfo> tensors;

  static Layout for_config(const ModelConfig& c) {
    Layout l;
    const auto d = static_cast<std::size_t>(c.d_model);
    const auto ff = static_cast<std::size_t>(c.d_ff);
    auto add = [&](std::string name, std::size_t rows, std::size_t cols, TensorKind kind) {
      l.tensors.push_back({std::move(name), rows, cols, l.total, kind});
      const std::size_t off = l.total;
      l.total += rows * cols;
      return off;
    };
    l.tok_emb = add("token_embedding", static_cast<std::size_t>(c.vocab_size), d, TensorKind::kWeight);
    l.pos_emb = add("position_embedding", static_cast<std::size_t>(c.max_context), d, TensorKind::kWeight);
    for (int i = 0; i < c.n_layers; ++i) {
      const std::string p = "layer" + std::to_string(i) + ".";
      LayerOffsets o{};
      o.ln1_g = add(p + "ln1.gain", 1, d, TensorKind::kGain);
      o.ln1_b = add(p + "ln1.bias", 1, d, TensorKind::kBias);
      o.wq = add(p + "attn.wq", d, d, TensorKind::kWeight);
      o.bq = add(p + "attn.bq", 1, d, TensorKind::kBias);
      o.wk = add(p + "attn.wk", d, d, TensorKind::kWeight);
      o.bk = add(p + "attn.bk", 1, d, TensorKind::kBias);
      o.wv = add(p + "attn.wv", d, d, TensorKind::kWeight);
      o.bv = add(p + "attn.bv", 1, d, TensorKind::kBias);
      o.wo = add(p + "attn.wo", d, d, TensorKind::kWeight);
      o.bo = add(p + "attn.bo", 1, d, TensorKind::kBias);
      o.ln2_g = add(p + "ln2.gain", 1, d, TensorKind::kGain);
      o.ln2_b = add(p + "ln2.bias", 1, d, TensorKind::kBias);
      o.w1 = add(p + "ffn.w1", d, ff, TensorKind::kWeight);
      o.b1 = add(p + "ffn.b1", 1, ff, TensorKind::kBias);
      o.w2 = add(p + "ffn.w2", ff, d, TensorKind::kWeight);
      o.b2 = add(p + "ffn.b2", 1, d, TensorKind::kBias);
      l.layers.push_back(o);
    }
    l.lnf_g = add("final_ln.gain", 1, d, TensorKind::kGain);
    l.lnf_b = add("final_ln.bias", 1, d, TensorKind::kBias);
    l.mlm_bias = add("mlm.bias", 1, static_cast<std::size_t>(c.vocab_size), TensorKind::kBias);
    return l;
  }
};

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
// Flat buffers get Eigen's alignment so vectorized reductions over mapped
// slices take the same code path on every run, whatever the heap layout.
template <typename S>
using AlignedVector = std::vector<S, Eigen::aligned_allocator<S>>;
template <typename S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;
template <typename S>
using MatMap = Eigen::Map<Mat<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const Mat<S>>;
template <typename S>
using RowVecMap = Eigen::Map<RowVec<S>>;
template <typename S>
using ConstRowVecMap = Eigen::Map<const RowVec<S>>;

// All encoder weights as one flat array. Also used for gradients and optimizer
// moments, which share the layout.
template <typename S>
struct Params {
  ModelConfig config;
  Layout layout;
  AlignedVector<S> data;

  Params() = default;
  explicit Params(const ModelConfig& c) : config(c), layout(Layout::for_config(c)), data(layout.total, S(0)) {}

  std::size_t size() const { return data.size(); }

  MatMap<S> mat(std::size_t off, std::size_t rows, std::size_t cols) { return MatMap<S>(data.data() + off, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)); }
  ConstMatMap<S> mat(std::size_t off, std::size_t rows, std::size_t cols) const { return ConstMatMap<S>(data.data() + off, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)); }
  RowVecMap<S> vec(std::size_t off, std::size_t n) { return RowVecMap<S>(data.data() + off, static_cast<Eigen::Index>(n)); }
  ConstRowVecMap<S> vec(std::size_t off, std::size_t n) const { return ConstRowVecMap<S>(data.data() + off, static_cast<Eigen::Index>(n)); }

  std::size_t d() const { return static_cast<std::size_t>(config.d_model); }
  std::size_t ff() const { return static_cast<std::size_t>(config.d_ff); }
  std::size_t vocab() const { return static_cast<std::size_t>(config.vocab_size); }

  auto token_embedding() { return mat(layout.tok_emb, vocab(), d()); }
  auto token_embedding() const { return mat(layout.tok_emb, vocab(), d()); }
  auto position_embedding() { return mat(layout.pos_emb, static_cast<std::size_t>(config.max_context), d()); }
  auto position_embedding() const { return mat(layout.pos_emb, static_cast<std::size_t>(config.max_context), d()); }

  void set_zero() { std::fill(data.begin(), data.end(), S(0)); }

  Params& operator+=(const Params& o) {
    for (std::size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
    return *this;
  }

  template <typename T>
  Params<T> cast() const {
    Params<T> out(config);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<T>(data[i]);
    return out;
  }
};

// Scaled-normal weights (std 0.02), zero biases, unit gains.
template <typename S>
Params<S> init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Params<S> p(config);
  Rng rng(derive_seed(seed, "encoder-init"));
  for (const auto& t : p.layout.tensors) {
    S* base = p.data.data() + t.offset;
    for (std::size_t i = 0; i < t.size(); ++i) {
      switch (t.kind) {
        case TensorKind::kWeight: base[i] = static_cast<S>(0.02 * rng.normal()); break;
        case TensorKind::kBias: base[i] = S(0); break;
        case TensorKind::kGain: base[i] = S(1); break;
      }
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Forward.

template <typename S>
struct LayerCache {
  Mat<S> x_in;
  Mat<S> ln1_hat;
  RowVec<S> ln1_rstd;
  Mat<S> a;
  Mat<S> q, k, v;
  std::vector<Mat<S>> probs;  // per head, L×L
  Mat<S> ctx;
  Mat<S> attn_drop;  // dropout scale per element, empty when inactive
  Mat<S> x_mid;
  Mat<S> ln2_hat;
  RowVec<S> ln2_rstd;
  Mat<S> c;
  Mat<S> u;
  Mat<S> u_cdf;  // Φ(u)
  Mat<S> g;      // GELU(u) = u Φ(u)
  Mat<S> ffn_drop;
};

template <typename S>
struct ForwardCache {
  std::vector<int> ids;  // real prefix only
  Mat<S> emb_drop;
  std::vector<LayerCache<S>> layers;
  Mat<S> x_final;
  Mat<S> lnf_hat;
  RowVec<S> lnf_rstd;
  Mat<S> h;  // L×d final hidden states

  std::size_t length() const { return ids.size(); }
};

template <typename S>
struct ForwardOutput {
  Mat<S> hidden_states;  // max_context × d_model, zero rows at padding
  RowVec<S> cls_vector;
  Mat<S> mlm_logits;  // one row per requested position
};

namespace detail {

// Standard normal CDF, elementwise (vectorized erf).
template <typename S>
Mat<S> normal_cdf(const Mat<S>& u) {
  return (S(0.5) * (S(1) + (u.array() * (S(1) / std::numbers::sqrt2_v<S>)).erf())).matrix();
}

// d/du [u Φ(u)] = Φ(u) + u φ(u)
template <typename S>
Mat<S> gelu_grad(const Mat<S>& u, const Mat<S>& cdf) {
  const S inv_sqrt_2pi = S(1) / std::sqrt(S(2) * std::numbers::pi_v<S>);
  return (cdf.array() + u.array() * (S(-0.5) * u.array().square()).exp() * inv_sqrt_2pi).matrix();
}

template <typename S>
void layer_norm(const Mat<S>& x, ConstRowVecMap<S> gain, ConstRowVecMap<S> bias, S eps, Mat<S>& hat,
                RowVec<S>& rstd, Mat<S>& out) {
  const auto n = x.rows();
  const auto d = x.cols();
  hat.resize(n, d);
  rstd.resize(n);
  out.resize(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const S mean = x.row(i).mean();
    const S var = (x.row(i).array() - mean).square().mean();
    const S r = S(1) / std::sqrt(var + eps);
    rstd(i) = r;
    hat.row(i) = (x.row(i).array() - mean) * r;
    out.row(i) = hat.row(i).cwiseProduct(gain) + bias;
  }
}

// Accumulates gain/bias grads and returns dx.
template <typename S>
Mat<S> layer_norm_backward(const Mat<S>& dy, const Mat<S>& hat, const RowVec<S>& rstd, ConstRowVecMap<S> gain,
                           RowVecMap<S> dgain, RowVecMap<S> dbias) {
  dgain += dy.cwiseProduct(hat).colwise().sum();
  dbias += dy.colwise().sum();
  Mat<S> dhat = dy.array().rowwise() * gain.array();
  Mat<S> dx(dy.rows(), dy.cols());
  const S inv_d = S(1) / static_cast<S>(dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const S m1 = dhat.row(i).sum() * inv_d;
    const S m2 = dhat.row(i).dot(hat.row(i)) * inv_d;
    dx.row(i) = rstd(i) * (dhat.row(i).array() - m1 - hat.row(i).array() * m2);
  }
  return dx;
}

template <typename S>
Mat<S> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  Mat<S> m(rows, cols);
  const S keep_scale = static_cast<S>(1.0 / (1.0 - rate));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform() < rate ? S(0) : keep_scale;
  return m;
}

inline std::size_t real_length(const TokenSequence& seq, std::size_t max_context) {
  if (seq.ids.size() != max_context || seq.attention_mask.size() != max_context) {
    throw InvalidArgument("token sequence length must equal max_context (" + std::to_string(max_context) + ")");
  }
  std::size_t n = 0;
  while (n < max_context && seq.attention_mask[n] == 1) ++n;
  for (std::size_t i = n; i < max_context; ++i) {
    if (seq.attention_mask[i] != 0) throw InvalidArgument("attention mask must be 1s followed by 0s");
  }
  if (n == 0) throw InvalidArgument("token sequence has no real tokens");
  return n;
}

}  // namespace detail

// Runs the encoder over the first `ids.size()` positions (all real tokens).
template <typename S>
ForwardCache<S> forward_cached(const Params<S>& p, std::span<const int> ids, bool train_mode,
                               std::uint64_t dropout_seed = 0) {
  const auto& cfg = p.config;
  const auto L = static_cast<Eigen::Index>(ids.size());
  const auto d = static_cast<Eigen::Index>(cfg.d_model);
  const auto dh = static_cast<Eigen::Index>(cfg.d_head());
  const S eps = static_cast<S>(cfg.layernorm_epsilon);
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  const bool dropout = train_mode && cfg.dropout_rate > 0.0;
  if (L > cfg.max_context) throw InvalidArgument("sequence longer than max_context");
  Rng rng(dropout_seed);

  ForwardCache<S> c;
  c.ids.assign(ids.begin(), ids.end());
  Mat<S> x(L, d);
  const auto E = p.token_embedding();
  const auto P = p.position_embedding();
  for (Eigen::Index i = 0; i < L; ++i) {
    const int id = ids[static_cast<std::size_t>(i)];
    if (id < 0 || id >= cfg.vocab_size) throw InvalidArgument("token id out of range: " + std::to_string(id));
    x.row(i) = E.row(id) + P.row(i);
  }
  if (dropout) {
    c.emb_drop = detail::dropout_mask<S>(L, d, cfg.dropout_rate, rng);
    x = x.cwiseProduct(c.emb_drop);
  }

  c.layers.resize(static_cast<std::size_t>(cfg.n_layers));
  for (int li = 0; li < cfg.n_layers; ++li) {
    const auto& o = p.layout.layers[static_cast<std::size_t>(li)];
    auto& lc = c.layers[static_cast<std::size_t>(li)];
    const auto du = static_cast<std::size_t>(d);
    const auto ffu = p.ff();
    lc.x_in = x;
    detail::layer_norm<S>(x, p.vec(o.ln1_g, du), p.vec(o.ln1_b, du), eps, lc.ln1_hat, lc.ln1_rstd, lc.a);
    lc.q = (lc.a * p.mat(o.wq, du, du)).rowwise() + p.vec(o.bq, du);
    lc.k = (lc.a * p.mat(o.wk, du, du)).rowwise() + p.vec(o.bk, du);
    lc.v = (lc.a * p.mat(o.wv, du, du)).rowwise() + p.vec(o.bv, du);
    lc.ctx.resize(L, d);
    lc.probs.resize(static_cast<std::size_t>(cfg.n_heads));
    for (int h = 0; h < cfg.n_heads; ++h) {
      const Eigen::Index col = h * dh;
      Mat<S> scores = (lc.q.middleCols(col, dh) * lc.k.middleCols(col, dh).transpose()) * scale;
      for (Eigen::Index i = 0; i < L; ++i) {
        const S mx = scores.row(i).maxCoeff();
        scores.row(i) = (scores.row(i).array() - mx).exp();
        scores.row(i) /= scores.row(i).sum();
      }
      lc.ctx.middleCols(col, dh).noalias() = scores * lc.v.middleCols(col, dh);
      lc.probs[static_cast<std::size_t>(h)] = std::move(scores);
    }
    Mat<S> attn = (lc.ctx * p.mat(o.wo, du, du)).rowwise() + p.vec(o.bo, du);
    if (dropout) {
      lc.attn_drop = detail::dropout_mask<S>(L, d, cfg.dropout_rate, rng);
      attn = attn.cwiseProduct(lc.attn_drop);
    }
    x += attn;
    lc.x_mid = x;
    detail::layer_norm<S>(x, p.vec(o.ln2_g, du), p.vec(o.ln2_b, du), eps, lc.ln2_hat, lc.ln2_rstd, lc.c);
    lc.u = (lc.c * p.mat(o.w1, du, ffu)).rowwise() + p.vec(o.b1, ffu);
    lc.u_cdf = detail::normal_cdf<S>(lc.u);
    lc.g = lc.u.cwiseProduct(lc.u_cdf);
    Mat<S> f = (lc.g * p.mat(o.w2, ffu, du)).rowwise() + p.vec(o.b2, du);
    if (dropout) {
      lc.ffn_drop = detail::dropout_mask<S>(L, d, cfg.dropout_rate, rng);
      f = f.cwiseProduct(lc.ffn_drop);
    }
    x += f;
  }
  c.x_final = x;
  detail::layer_norm<S>(x, p.vec(p.layout.lnf_g, static_cast<std::size_t>(d)),
                        p.vec(p.layout.lnf_b, static_cast<std::size_t>(d)), eps, c.lnf_hat, c.lnf_rstd, c.h);
  return c;
}

// MLM logits for selected rows of the final hidden states.
template <typename S>
Mat<S> mlm_logits(const Params<S>& p, const Mat<S>& h, std::span<const int> positions) {
  Mat<S> rows(static_cast<Eigen::Index>(positions.size()), h.cols());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const int pos = positions[i];
    if (pos < 0 || pos >= h.rows()) throw InvalidArgument("logit position outside the real sequence");
    rows.row(static_cast<Eigen::Index>(i)) = h.row(pos);
  }
  Mat<S> logits = rows * p.token_embedding().transpose();
  logits.rowwise() += p.vec(p.layout.mlm_bias, p.vocab());
  return logits;
}

template <typename S>
ForwardOutput<S> forward(const Params<S>& p, const TokenSequence& seq, bool train_mode,
                         std::span<const int> logit_positions = {}, std::uint64_t dropout_seed = 0) {
  const auto max_context = static_cast<std::size_t>(p.config.max_context);
  const std::size_t n = detail::real_length(seq, max_context);
  auto cache = forward_cached(p, std::span<const int>(seq.ids.data(), n), train_mode, dropout_seed);
  ForwardOutput<S> out;
  out.hidden_states = Mat<S>::Zero(static_cast<Eigen::Index>(max_context), p.config.d_model);
  out.hidden_states.topRows(static_cast<Eigen::Index>(n)) = cache.h;
  out.cls_vector = cache.h.row(0);
  if (!logit_positions.empty()) out.mlm_logits = mlm_logits(p, cache.h, logit_positions);
  return out;
}

template <typename S>
RowVec<S> cls_embedding(const Params<S>& p, const TokenSequence& seq) {
  const std::size_t n = detail::real_length(seq, static_cast<std::size_t>(p.config.max_context));
  return forward_cached(p, std::span<const int>(seq.ids.data(), n), false).h.row(0);
}

// ---------------------------------------------------------------------------
// Backward.

// Propagates dL/dh (L×d, real positions) through the network, accumulating
// parameter gradients into `grads`.
template <typename S>
void backward_from_hidden(const Params<S>& p, const ForwardCache<S>& c, const Mat<S>& dh, Params<S>& grads) {
  const auto& cfg = p.config;
  const auto L = static_cast<Eigen::Index>(c.length());
  const auto du = p.d();
  const auto ffu = p.ff();
  const auto dh_sz = static_cast<Eigen::Index>(cfg.d_head());
  const S scale = S(1) / std::sqrt(static_cast<S>(dh_sz));

  Mat<S> dx = detail::layer_norm_backward<S>(dh, c.lnf_hat, c.lnf_rstd, p.vec(p.layout.lnf_g, du),
                                             grads.vec(p.layout.lnf_g, du), grads.vec(p.layout.lnf_b, du));

  for (int li = cfg.n_layers - 1; li >= 0; --li) {
    const auto& o = p.layout.layers[static_cast<std::size_t>(li)];
    const auto& lc = c.layers[static_cast<std::size_t>(li)];

    // FFN branch: x_out = x_mid + drop(g W2 + b2)
    Mat<S> df = lc.ffn_drop.size() ? Mat<S>(dx.cwiseProduct(lc.ffn_drop)) : dx;
    grads.mat(o.w2, ffu, du).noalias() += lc.g.transpose() * df;
    grads.vec(o.b2, du) += df.colwise().sum();
    Mat<S> dg = df * p.mat(o.w2, ffu, du).transpose();
    Mat<S> du_pre = dg.cwiseProduct(detail::gelu_grad<S>(lc.u, lc.u_cdf));
    grads.mat(o.w1, du, ffu).noalias() += lc.c.transpose() * du_pre;
    grads.vec(o.b1, ffu) += du_pre.colwise().sum();
    Mat<S> dc = du_pre * p.mat(o.w1, du, ffu).transpose();
    dx += detail::layer_norm_backward<S>(dc, lc.ln2_hat, lc.ln2_rstd, p.vec(o.ln2_g, du), grads.vec(o.ln2_g, du),
                                         grads.vec(o.ln2_b, du));

    // Attention branch: x_mid = x_in + drop(ctx Wo + bo)
    Mat<S> dattn = lc.attn_drop.size() ? Mat<S>(dx.cwiseProduct(lc.attn_drop)) : dx;
    grads.mat(o.wo, du, du).noalias() += lc.ctx.transpose() * dattn;
    grads.vec(o.bo, du) += dattn.colwise().sum();
    Mat<S> dctx = dattn * p.mat(o.wo, du, du).transpose();
    Mat<S> dq(L, static_cast<Eigen::Index>(du)), dk(L, static_cast<Eigen::Index>(du)), dv(L, static_cast<Eigen::Index>(du));
    for (int h = 0; h < cfg.n_heads; ++h) {
      const Eigen::Index col = h * dh_sz;
      const Mat<S>& P = lc.probs[static_cast<std::size_t>(h)];
      const auto dctx_h = dctx.middleCols(col, dh_sz);
      Mat<S> dP = dctx_h * lc.v.middleCols(col, dh_sz).transpose();
      dv.middleCols(col, dh_sz).noalias() = P.transpose() * dctx_h;
      // softmax backward: dS = P ⊙ (dP − rowsum(dP ⊙ P))
      Eigen::Matrix<S, Eigen::Dynamic, 1> rows = dP.cwiseProduct(P).rowwise().sum();
      Mat<S> dS = P.cwiseProduct(dP.colwise() - rows) * scale;
      dq.middleCols(col, dh_sz).noalias() = dS * lc.k.middleCols(col, dh_sz);
      dk.middleCols(col, dh_sz).noalias() = dS.transpose() * lc.q.middleCols(col, dh_sz);
    }
    grads.mat(o.wq, du, du).noalias() += lc.a.transpose() * dq;
    grads.vec(o.bq, du) += dq.colwise().sum();
    grads.mat(o.wk, du, du).noalias() += lc.a.transpose() * dk;
    grads.vec(o.bk, du) += dk.colwise().sum();
    grads.mat(o.wv, du, du).noalias() += lc.a.transpose() * dv;
    grads.vec(o.bv, du) += dv.colwise().sum();
    Mat<S> da = dq * p.mat(o.wq, du, du).transpose();
    da.noalias() += dk * p.mat(o.wk, du, du).transpose();
    da.noalias() += dv * p.mat(o.wv, du, du).transpose();
    dx += detail::layer_norm_backward<S>(da, lc.ln1_hat, lc.ln1_rstd, p.vec(o.ln1_g, du), grads.vec(o.ln1_g, du),
                                         grads.vec(o.ln1_b, du));
  }

  if (c.emb_drop.size()) dx = dx.cwiseProduct(c.emb_drop);
  auto dE = grads.token_embedding();
  auto dP = grads.position_embedding();
  for (Eigen::Index i = 0; i < L; ++i) {
    dE.row(c.ids[static_cast<std::size_t>(i)]) += dx.row(i);
    dP.row(i) += dx.row(i);
  }
}

// Backpropagates dL/dlogits at `positions` through the tied MLM head and the
// encoder. Accumulates into grads.
template <typename S>
void backward_from_logits(const Params<S>& p, const ForwardCache<S>& c, std::span<const int> positions,
                          const Mat<S>& dlogits, Params<S>& grads) {
  const auto d = static_cast<Eigen::Index>(p.d());
  Mat<S> rows(static_cast<Eigen::Index>(positions.size()), d);
  for (std::size_t i = 0; i < positions.size(); ++i) rows.row(static_cast<Eigen::Index>(i)) = c.h.row(positions[i]);
  grads.token_embedding().noalias() += dlogits.transpose() * rows;
  grads.vec(p.layout.mlm_bias, p.vocab()) += dlogits.colwise().sum();
  Mat<S> drows = dlogits * p.token_embedding();
  Mat<S> dh = Mat<S>::Zero(c.h.rows(), d);
  for (std::size_t i = 0; i < positions.size(); ++i) dh.row(positions[i]) += drows.row(static_cast<Eigen::Index>(i));
  backward_from_hidden(p, c, dh, grads);
}

}  // namespace txlm::nn
