#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "txlm/encoder.hpp"

namespace txlm::nn {

template <typename S>
struct LossResult {
  S loss = S(0);
  Mat<S> dlogits;  // dloss/dlogits, same shape as the logits
};

namespace detail {

template <typename S>
Mat<S> log_softmax_rows(const Mat<S>& z) {
  Mat<S> out(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const S mx = z.row(i).maxCoeff();
    const S lse = mx + std::log((z.row(i).array() - mx).exp().sum());
    out.row(i) = z.row(i).array() - lse;
  }
  return out;
}

inline void check_targets(std::span<const int> targets, Eigen::Index rows, Eigen::Index vocab) {
  if (static_cast<Eigen::Index>(targets.size()) != rows) throw InvalidArgument("one target per logit row required");
  for (int t : targets) {
    if (t < 0 || t >= vocab) throw InvalidArgument("target id out of range");
  }
}

}  // namespace detail

// Sum of cross-entropies divided by `normalizer`.
template <typename S>
LossResult<S> cross_entropy(const Mat<S>& logits, std::span<const int> targets, S normalizer) {
  detail::check_targets(targets, logits.rows(), logits.cols());
  const Mat<S> logp = detail::log_softmax_rows(logits);
  LossResult<S> r;
  r.dlogits = logp.array().exp() / normalizer;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    r.loss -= logp(row, targets[i]);
    r.dlogits(row, targets[i]) -= S(1) / normalizer;
  }
  r.loss /= normalizer;
  return r;
}

// Mean cross-entropy over target rows.
template <typename S>
S mlm_loss(const Mat<S>& logits, std::span<const int> targets) {
  if (targets.empty()) throw InvalidArgument("mlm_loss needs at least one target");
  return cross_entropy<S>(logits, targets, static_cast<S>(targets.size())).loss;
}

struct DistillWeights {
  double temperature = 2.0;
  double soft = 0.5;
  double hard = 0.5;
};

// w_soft · T² · KL(softmax(teacher/T) ‖ softmax(student/T)) + w_hard · CE(student, hard),
// summed over rows and divided by `normalizer` (rows when omitted).
template <typename S>
LossResult<S> distill_loss(const Mat<S>& student, const Mat<S>& teacher, std::span<const int> hard_targets,
                           const DistillWeights& w, std::optional<S> normalizer = std::nullopt) {
  if (!(w.temperature > 0.0)) throw InvalidArgument("temperature must be positive");
  if (student.rows() != teacher.rows() || student.cols() != teacher.cols()) {
    throw InvalidArgument("student and teacher logits must have the same shape");
  }
  const S n = normalizer.value_or(static_cast<S>(student.rows()));
  if (!(n > S(0))) throw InvalidArgument("distill_loss needs at least one row");
  const S T = static_cast<S>(w.temperature);
  LossResult<S> r;
  r.dlogits = Mat<S>::Zero(student.rows(), student.cols());
  if (w.soft != 0.0) {
    const Mat<S> log_ps = detail::log_softmax_rows<S>(student / T);
    const Mat<S> log_pt = detail::log_softmax_rows<S>(teacher / T);
    const Mat<S> pt = log_pt.array().exp();
    const S ws = static_cast<S>(w.soft);
    S kl = S(0);
    for (Eigen::Index i = 0; i < pt.size(); ++i) {
      const S q = pt.data()[i];
      if (q > S(0)) kl += q * (log_pt.data()[i] - log_ps.data()[i]);
    }
    r.loss += ws * T * T * kl / n;
    r.dlogits += (ws * T / n) * (Mat<S>(log_ps.array().exp()) - pt);
  }
  if (w.hard != 0.0) {
    auto ce = cross_entropy<S>(student, hard_targets, n);
    const S wh = static_cast<S>(w.hard);
    r.loss += wh * ce.loss;
    r.dlogits += wh * ce.dlogits;
  }
  return r;
}

// What the scalar loss of one sequence is made of.
template <typename S>
struct LossSpec {
  std::vector<int> positions;  // rows of the real sequence that carry targets
  std::vector<int> targets;    // original token ids at those positions
  std::optional<Mat<S>> teacher_logits;  // present => distillation loss
  DistillWeights distill;
  std::optional<S> normalizer;  // defaults to positions.size()
};

template <typename S>
struct BackwardResult {
  S loss = S(0);
  Params<S> grads;
};

template <typename S>
S sequence_loss(const Params<S>& p, const ForwardCache<S>& cache, const LossSpec<S>& spec, Mat<S>* dlogits_out) {
  const Mat<S> logits = mlm_logits(p, cache.h, spec.positions);
  LossResult<S> r;
  if (spec.teacher_logits) {
    r = distill_loss<S>(logits, *spec.teacher_logits, spec.targets, spec.distill, spec.normalizer);
  } else {
    r = cross_entropy<S>(logits, spec.targets, spec.normalizer.value_or(static_cast<S>(spec.targets.size())));
  }
  if (dlogits_out) *dlogits_out = std::move(r.dlogits);
  return r.loss;
}

// Exact gradient of the loss described by `spec` for one sequence, accumulated
// into `grads`. Returns the loss.
template <typename S>
S accumulate_gradients(const Params<S>& p, std::span<const int> ids, const LossSpec<S>& spec, bool train_mode,
                       std::uint64_t dropout_seed, Params<S>& grads) {
  if (spec.positions.empty()) throw InvalidArgument("loss needs at least one target position");
  const auto cache = forward_cached(p, ids, train_mode, dropout_seed);
  Mat<S> dlogits;
  const S loss = sequence_loss(p, cache, spec, &dlogits);
  backward_from_logits(p, cache, spec.positions, dlogits, grads);
  return loss;
}

template <typename S>
BackwardResult<S> backward(const Params<S>& p, const TokenSequence& seq, const LossSpec<S>& spec,
                           bool train_mode = false, std::uint64_t dropout_seed = 0) {
  const std::size_t n = detail::real_length(seq, static_cast<std::size_t>(p.config.max_context));
  BackwardResult<S> out{S(0), Params<S>(p.config)};
  out.loss = accumulate_gradients(p, std::span<const int>(seq.ids.data(), n), spec, train_mode, dropout_seed,
                                  out.grads);
  return out;
}

template <typename S>
S loss_value(const Params<S>& p, const TokenSequence& seq, const LossSpec<S>& spec) {
  const std::size_t n = detail::real_length(seq, static_cast<std::size_t>(p.config.max_context));
  const auto cache = forward_cached(p, std::span<const int>(seq.ids.data(), n), false);
  return sequence_loss<S>(p, cache, spec, nullptr);
}

}  // namespace txlm::nn
