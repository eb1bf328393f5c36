#include "txlm/encoder.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "gradcheck.hpp"
#include "txlm/losses.hpp"

namespace txlm::nn {
namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.vocab_size = 23;
  c.max_context = 16;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_layers = 1;
  c.d_ff = 16;
  c.dropout_rate = 0.0;
  return c;
}

TokenSequence make_sequence(std::vector<int> real, std::size_t max_context) {
  TokenSequence s;
  s.attention_mask.assign(real.size(), 1);
  s.ids = std::move(real);
  s.ids.resize(max_context, token_id::kPad);
  s.attention_mask.resize(max_context, 0);
  return s;
}

// Perturbs every parameter so gains/biases are not at their trivial init values.
Params<double> random_params(const ModelConfig& c, std::uint64_t seed) {
  Params<double> p(c);
  Rng rng(seed);
  for (const auto& t : p.layout.tensors) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      double v = 0.3 * rng.normal();
      if (t.kind == TensorKind::kGain) v += 1.0;
      p.data[t.offset + i] = v;
    }
  }
  return p;
}

std::size_t closed_form_param_count(const ModelConfig& c) {
  const std::size_t V = static_cast<std::size_t>(c.vocab_size);
  const std::size_t T = static_cast<std::size_t>(c.max_context);
  const std::size_t d = static_cast<std::size_t>(c.d_model);
  const std::size_t f = static_cast<std::size_t>(c.d_ff);
  const std::size_t per_layer = 4 * d * d + 2 * d * f + 9 * d + f;
  return V * d + T * d + static_cast<std::size_t>(c.n_layers) * per_layer + 2 * d + V;
}

TEST(EncoderInit, DeterministicPerSeed) {
  ModelConfig c = tiny_config();
  auto a = init_params<float>(c, 7);
  auto b = init_params<float>(c, 7);
  auto other = init_params<float>(c, 8);
  ASSERT_EQ(a.data.size(), b.data.size());
  EXPECT_EQ(0, std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)));
  EXPECT_NE(a.data, other.data);
}

TEST(EncoderInit, GainsOneBiasesZero) {
  auto p = init_params<double>(tiny_config(), 3);
  double weight_sq = 0.0;
  std::size_t weight_n = 0;
  for (const auto& t : p.layout.tensors) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double v = p.data[t.offset + i];
      if (t.kind == TensorKind::kGain) {
        EXPECT_EQ(v, 1.0) << t.name;
      }
      if (t.kind == TensorKind::kBias) {
        EXPECT_EQ(v, 0.0) << t.name;
      }
      if (t.kind == TensorKind::kWeight) {
        weight_sq += v * v;
        ++weight_n;
      }
    }
  }
  EXPECT_NEAR(std::sqrt(weight_sq / static_cast<double>(weight_n)), 0.02, 0.002);
}

TEST(EncoderInit, ParameterCountMatchesShapeArithmetic) {
  ModelConfig full;  // defaults: V=8192, T=512, d=128, 4 layers, ff=512
  EXPECT_EQ(Layout::for_config(full).total, closed_form_param_count(full));
  ModelConfig distilled = full;
  distilled.n_layers = 2;
  EXPECT_EQ(Layout::for_config(distilled).total, closed_form_param_count(distilled));
  EXPECT_EQ(Layout::for_config(tiny_config()).total, closed_form_param_count(tiny_config()));
}

TEST(EncoderConfig, RejectsIndivisibleHeads) {
  ModelConfig c = tiny_config();
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), InvalidArgument);
}

TEST(EncoderForward, ClsIsPositionZeroHiddenState) {
  auto c = tiny_config();
  auto p = random_params(c, 11);
  auto seq = make_sequence({2, 5, 8, 6, 12, 7, 20, 21}, 16);
  auto out = forward(p, seq, false);
  EXPECT_TRUE(out.cls_vector.isApprox(out.hidden_states.row(0), 0.0));
  EXPECT_TRUE(cls_embedding(p, seq).isApprox(out.hidden_states.row(0), 0.0));
  // Repeated calls are identical.
  EXPECT_EQ(cls_embedding(p, seq), cls_embedding(p, seq));
}

TEST(EncoderForward, PaddedIdsDoNotAffectAnyOutput) {
  auto c = tiny_config();
  auto p = random_params(c, 12);
  auto seq = make_sequence({2, 5, 8, 6, 12}, 16);
  auto base = forward(p, seq, false);
  auto swapped = seq;
  swapped.ids[10] = 17;
  swapped.ids[13] = 19;
  std::swap(swapped.ids[10], swapped.ids[13]);
  auto out = forward(p, swapped, false);
  EXPECT_EQ(base.hidden_states, out.hidden_states);
  EXPECT_EQ(base.cls_vector, out.cls_vector);
}

TEST(EncoderForward, IdenticalTokensWithoutPositionsGiveIdenticalStates) {
  auto c = tiny_config();
  auto p = random_params(c, 13);
  p.position_embedding().setZero();
  auto seq = make_sequence({9, 9, 9, 9, 9, 9}, 16);
  auto out = forward(p, seq, false);
  for (int i = 1; i < 6; ++i) {
    EXPECT_TRUE(out.hidden_states.row(i).isApprox(out.hidden_states.row(0), 1e-12)) << i;
  }
  for (int i = 6; i < 16; ++i) EXPECT_EQ(out.hidden_states.row(i).norm(), 0.0);
}

TEST(EncoderForward, AttentionRowsSumToOne) {
  auto c = tiny_config();
  c.n_layers = 2;
  auto p = random_params(c, 14);
  std::vector<int> ids = {2, 5, 8, 6, 12, 7, 20};
  auto cache = forward_cached(p, std::span<const int>(ids), false);
  for (const auto& layer : cache.layers) {
    for (const auto& probs : layer.probs) {
      ASSERT_EQ(probs.rows(), 7);
      ASSERT_EQ(probs.cols(), 7);
      for (int i = 0; i < probs.rows(); ++i) EXPECT_NEAR(probs.row(i).sum(), 1.0, 1e-6);
    }
  }
}

TEST(EncoderForward, ClsSensitiveToEveryRealToken) {
  auto c = tiny_config();
  auto p = random_params(c, 15);
  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> ids = {token_id::kCls};
    const int n = 3 + static_cast<int>(rng.below(10));
    for (int i = 1; i < n; ++i) ids.push_back(5 + static_cast<int>(rng.below(18)));
    auto seq = make_sequence(ids, 16);
    const auto base = cls_embedding(p, seq);
    const auto pos = 1 + rng.below(static_cast<std::uint64_t>(n - 1));
    auto changed = seq;
    changed.ids[pos] = changed.ids[pos] == 5 ? 6 : 5;
    EXPECT_GT((cls_embedding(p, changed) - base).norm(), 1e-9) << "trial " << trial;
  }
}

TEST(EncoderForward, RejectsShapeMismatch) {
  auto c = tiny_config();
  auto p = random_params(c, 16);
  auto seq = make_sequence({2, 5}, 15);
  EXPECT_THROW(forward(p, seq, false), InvalidArgument);
  auto holes = make_sequence({2, 5, 6}, 16);
  holes.attention_mask[1] = 0;
  EXPECT_THROW(forward(p, holes, false), InvalidArgument);
}

TEST(EncoderForward, DropoutOnlyInTrainMode) {
  auto c = tiny_config();
  c.dropout_rate = 0.3;
  auto p = random_params(c, 17);
  auto seq = make_sequence({2, 5, 8, 6, 12}, 16);
  EXPECT_EQ(forward(p, seq, false).hidden_states, forward(p, seq, false).hidden_states);
  auto a = forward(p, seq, true, {}, 1).hidden_states;
  auto b = forward(p, seq, true, {}, 2).hidden_states;
  EXPECT_NE(a, b);
  EXPECT_EQ(a, forward(p, seq, true, {}, 1).hidden_states);
}

// Finite-difference check over every parameter group.
void check_gradients(const LossSpec<double>& spec, std::uint64_t seed) {
  auto c = tiny_config();
  auto p = random_params(c, seed);
  auto seq = make_sequence({2, 5, 8, 6, 12, 7, 20, 3, 5, 9, 6, 14}, 16);
  auto analytic = backward(p, seq, spec);
  auto loss = [&] { return loss_value(p, seq, spec); };
  EXPECT_NEAR(analytic.loss, loss(), 1e-12);
  Rng rng(seed + 1);
  double worst = 0.0;
  for (const auto& t : p.layout.tensors) {
    for (std::size_t i : testing::sample_coordinates(t.offset, t.size(), 20, rng)) {
      const double numeric = testing::central_difference(p.data, i, loss);
      const double err = testing::relative_error(analytic.grads.data[i], numeric);
      worst = std::max(worst, err);
      EXPECT_LT(err, 1e-4) << t.name << "[" << i - t.offset << "] analytic=" << analytic.grads.data[i]
                           << " numeric=" << numeric;
    }
  }
  ::testing::Test::RecordProperty("max_relative_error", std::to_string(worst));
}

TEST(EncoderBackward, MlmGradientMatchesFiniteDifferences) {
  LossSpec<double> spec;
  spec.positions = {2, 4, 6, 9};
  spec.targets = {8, 12, 20, 9};
  check_gradients(spec, 21);
}

TEST(EncoderBackward, DistillationGradientMatchesFiniteDifferences) {
  LossSpec<double> spec;
  spec.positions = {1, 4, 10};
  spec.targets = {5, 12, 6};
  Rng rng(5);
  Mat<double> teacher(3, 23);
  for (int i = 0; i < teacher.size(); ++i) teacher.data()[i] = rng.normal();
  spec.teacher_logits = teacher;
  spec.distill = {2.0, 0.7, 0.3};
  check_gradients(spec, 22);
}

TEST(EncoderBackward, PaddedPositionRowsGetZeroGradient) {
  auto c = tiny_config();
  auto p = random_params(c, 23);
  auto seq = make_sequence({2, 5, 8, 6, 12}, 16);
  LossSpec<double> spec;
  spec.positions = {1, 3};
  spec.targets = {4, 4};
  auto r = backward(p, seq, spec);
  auto dpos = r.grads.position_embedding();
  for (int row = 5; row < 16; ++row) EXPECT_EQ(dpos.row(row).norm(), 0.0);
  EXPECT_GT(dpos.row(1).norm(), 0.0);
}

TEST(EncoderBackward, GradientStepReducesLoss) {
  auto c = tiny_config();
  auto p = random_params(c, 24);
  auto seq = make_sequence({2, 5, 8, 6, 12, 7, 20, 3, 5, 9}, 16);
  LossSpec<double> spec;
  spec.positions = {2, 5, 8};
  spec.targets = {8, 7, 9};
  auto r = backward(p, seq, spec);
  for (std::size_t i = 0; i < p.data.size(); ++i) p.data[i] -= 1e-3 * r.grads.data[i];
  EXPECT_LT(loss_value(p, seq, spec), r.loss);
}

TEST(EncoderBackward, TiedHeadSharesEmbeddingTable) {
  // The MLM head has no projection of its own: perturbing the token table
  // changes logits through the head as well as through the input lookup.
  auto c = tiny_config();
  auto p = random_params(c, 25);
  EXPECT_EQ(p.layout.tensors.back().name, "mlm.bias");
  for (const auto& t : p.layout.tensors) EXPECT_EQ(t.name.find("mlm.weight"), std::string::npos);
  std::vector<int> ids = {2, 5, 8};
  auto cache = forward_cached(p, std::span<const int>(ids), false);
  std::vector<int> pos = {1};
  auto before = mlm_logits(p, cache.h, pos);
  p.token_embedding().row(20).array() += 1.0;  // id 20 is not in the input
  auto after = mlm_logits(p, cache.h, pos);
  EXPECT_NE(before(0, 20), after(0, 20));
  EXPECT_EQ(before(0, 19), after(0, 19));
}

}  // namespace
}  // namespace txlm::nn
