#include "txlm/coles.hpp"
#include "txlm/feateng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <span>
#include <vector>

#include "gradcheck.hpp"

namespace txlm {
namespace {

Transaction txn(Direction d, std::int64_t cents, std::string desc = "x", std::int64_t ts = 0) {
  return {ts, d, cents, std::move(desc)};
}

std::size_t idx(std::string_view name) {
  const auto names = feateng::schema();
  return static_cast<std::size_t>(std::find(names.begin(), names.end(), name) - names.begin());
}

// --- feateng --------------------------------------------------------------

TEST(FeatEng, SingleCredit) {
  const std::vector<Transaction> t = {txn(Direction::kCredit, 1000)};
  const auto f = feateng::features(t);
  ASSERT_EQ(f.size(), feateng::dimension());
  EXPECT_EQ(f[idx("all.sum")], 10.0);
  EXPECT_EQ(f[idx("all.count")], 1.0);
  EXPECT_EQ(f[idx("all.mean")], 10.0);
  EXPECT_EQ(f[idx("all.min")], 10.0);
  EXPECT_EQ(f[idx("all.max")], 10.0);
  EXPECT_EQ(f[idx("all.std")], 0.0);
  for (auto s : feateng::kStats) EXPECT_EQ(f[idx("debit." + std::string(s))], 0.0) << s;
  EXPECT_EQ(f[idx("debit.present")], 0.0);
  EXPECT_EQ(f[idx("credit.present")], 1.0);
  EXPECT_EQ(f[idx("credit.sum")], 10.0);
}

TEST(FeatEng, SymmetricPair) {
  const std::vector<Transaction> t = {txn(Direction::kCredit, 1000), txn(Direction::kDebit, 1000)};
  const auto f = feateng::features(t);
  EXPECT_EQ(f[idx("all.sum")], 0.0);
  EXPECT_EQ(f[idx("all.mean")], 0.0);
  EXPECT_EQ(f[idx("all.std")], 10.0);
  EXPECT_EQ(f[idx("all.min")], -10.0);
  EXPECT_EQ(f[idx("all.max")], 10.0);
  EXPECT_EQ(f[idx("debit.mean")], -10.0);
}

TEST(FeatEng, RejectsEmptyInput) {
  EXPECT_THROW(feateng::features(std::vector<Transaction>{}), InvalidArgument);
}

TEST(FeatEng, SchemaManifestMatchesDimension) {
  const auto m = feateng::schema_manifest();
  EXPECT_EQ(m.size(), feateng::dimension());
  EXPECT_EQ(m.at("all.sum"), 0);
  EXPECT_EQ(m.at("credit.present"), feateng::dimension() - 1);
}

// Welford in long double, written independently of the library.
struct Streaming {
  long double n = 0, mean = 0, m2 = 0, sum = 0, lo = 0, hi = 0;
  void add(long double x) {
    lo = n == 0 ? x : std::min(lo, x);
    hi = n == 0 ? x : std::max(hi, x);
    n += 1;
    sum += x;
    const long double d = x - mean;
    mean += d / n;
    m2 += d * (x - mean);
  }
  std::array<long double, 6> stats() const {
    if (n == 0) return {0, 0, 0, 0, 0, 0};
    return {sum, n, mean, lo, hi, std::sqrt(m2 / n)};
  }
};

TEST(FeatEng, MatchesStreamingOracleOnGeneratedAccounts) {
  synth::GeneratorConfig g;
  g.n_accounts = 1000;
  g.seed = 21;
  const auto corpus = synth::generate_corpus(g);
  for (const auto& a : corpus.accounts) {
    Streaming all, debit, credit;
    for (const auto& t : a.transactions) {
      const long double x = static_cast<long double>(t.amount_cents) / 100.0L * (t.direction == Direction::kCredit ? 1 : -1);
      all.add(x);
      (t.direction == Direction::kDebit ? debit : credit).add(x);
    }
    const auto f = feateng::features(a.transactions);
    std::size_t k = 0;
    for (const auto* s : {&all, &debit, &credit}) {
      for (long double expected : s->stats()) {
        const double e = static_cast<double>(expected);
        ASSERT_NEAR(f[k], e, 1e-9 * std::max(1.0, std::abs(e))) << a.account_id << " feature " << k;
        ++k;
      }
    }
    EXPECT_EQ(f[k], debit.n > 0 ? 1.0 : 0.0);
    EXPECT_EQ(f[k + 1], credit.n > 0 ? 1.0 : 0.0);
  }
}

TEST(FeatEng, PermutationInvariant) {
  synth::GeneratorConfig g;
  g.n_accounts = 50;
  const auto corpus = synth::generate_corpus(g);
  Rng rng(4);
  for (const auto& a : corpus.accounts) {
    auto shuffled = a.transactions;
    shuffle(shuffled, rng);
    const auto f = feateng::features(a.transactions);
    const auto h = feateng::features(shuffled);
    for (std::size_t k = 0; k < f.size(); ++k) EXPECT_NEAR(f[k], h[k], 1e-9 * std::max(1.0, std::abs(f[k])));
  }
}

// --- CoLES sampling -------------------------------------------------------

TEST(ColesSampling, TwoAccountsTwoSubsequences) {
  Rng rng(1);
  const std::vector<std::size_t> lengths = {30, 40};
  const auto s = coles::sample_pairs(lengths, 2, 10, 20, rng);
  ASSERT_EQ(s.subs.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(s.positives(i).size(), 1u);
    EXPECT_EQ(s.negatives(i).size(), 2u);
  }
}

TEST(ColesSampling, ShortAccountsAreSkipped) {
  Rng rng(2);
  const std::vector<std::size_t> lengths = {5, 30, 9};
  const auto s = coles::sample_pairs(lengths, 3, 10, 20, rng);
  EXPECT_EQ(s.skipped_accounts, 2u);
  EXPECT_EQ(s.subs.size(), 3u);
  for (const auto& sub : s.subs) EXPECT_EQ(sub.slot, 1u);
  EXPECT_THROW(coles::sample_pairs(std::vector<std::size_t>{30}, 3, 10, 20, rng), InvalidArgument);
}

TEST(ColesSampling, LengthsUniformAndContiguousWithinAccount) {
  Rng rng(3);
  const std::vector<std::size_t> lengths = {15, 200};
  const int lo = 10;
  std::vector<double> counts_short(6, 0.0), counts_long(91, 0.0);
  double n_short = 0, n_long = 0;
  for (int draw = 0; draw < 10000; ++draw) {
    const auto s = coles::sample_pairs(lengths, 1, lo, 100, rng);
    for (const auto& sub : s.subs) {
      ASSERT_LE(sub.begin + sub.length, lengths[sub.slot]);
      if (sub.slot == 0) {
        counts_short[sub.length - lo] += 1;
        n_short += 1;
      } else {
        counts_long[sub.length - lo] += 1;
        n_long += 1;
      }
    }
  }
  // Short account: lengths uniform on [10, 15]; long one: [10, 100].
  for (double c : counts_short) {
    const double p = 1.0 / 6.0;
    EXPECT_NEAR(c / n_short, p, 3.0 * std::sqrt(p * (1 - p) / n_short) + 1e-12);
  }
  int outside = 0;
  for (double c : counts_long) {
    const double p = 1.0 / 91.0;
    outside += std::abs(c / n_long - p) > 3.0 * std::sqrt(p * (1 - p) / n_long) ? 1 : 0;
  }
  EXPECT_LE(outside, 3);  // about 0.3% of 91 cells expected beyond 3 sigma
}

// --- CoLES features and encoder -------------------------------------------

TEST(ColesFeatures, LayoutAndTrigramMass) {
  std::vector<double> f(coles::kFeatureDim);
  coles::transaction_features<double>(txn(Direction::kDebit, 12345, "Coffee Shop"), f.data());
  EXPECT_DOUBLE_EQ(f[0], -std::log1p(123.45));
  EXPECT_EQ(f[1], 1.0);
  EXPECT_EQ(f[2], 0.0);
  double mass = 0.0;
  for (int k = 3; k < coles::kFeatureDim; ++k) mass += f[static_cast<std::size_t>(k)];
  EXPECT_NEAR(mass, 1.0, 1e-12);
}

TEST(ColesEncoder, SingleTransactionIsOneGruStep) {
  const auto p = coles::init_gru<double>(8, 0.3, 5);
  const std::vector<Transaction> one = {txn(Direction::kCredit, 5000, "payroll deposit")};
  const auto h = coles::embed(p, one);
  std::vector<double> x(coles::kFeatureDim);
  coles::transaction_features<double>(one[0], x.data());
  const int H = 8;
  auto pre = [&](int col) {
    double s = p.b()(col);
    for (int i = 0; i < coles::kFeatureDim; ++i) s += x[static_cast<std::size_t>(i)] * p.wx()(i, col);
    return s;
  };
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  for (int k = 0; k < H; ++k) {
    const double r = sig(pre(k));
    const double z = sig(pre(H + k));
    const double n = std::tanh(pre(2 * H + k) + r * p.cn()(k));
    EXPECT_NEAR(h(k), (1.0 - z) * n, 1e-14);
  }
}

TEST(ColesEncoder, DeterministicAndOrderSensitive) {
  const auto p = coles::init_gru<float>(16, 0.1, 7);
  synth::GeneratorConfig g;
  g.n_accounts = 20;
  const auto corpus = synth::generate_corpus(g);
  Rng rng(8);
  for (const auto& a : corpus.accounts) {
    if (a.transactions.size() < 3) continue;
    const auto e1 = coles::embed(p, a.transactions);
    EXPECT_EQ(e1, coles::embed(p, a.transactions));
    auto rev = a.transactions;
    std::reverse(rev.begin(), rev.end());
    EXPECT_GT((coles::embed(p, rev) - e1).norm(), 1e-6f) << a.account_id;
  }
  EXPECT_THROW(coles::embed(p, std::vector<Transaction>{}), InvalidArgument);
}

struct GradFixture {
  std::vector<coles::Mat<double>> inputs;
  std::vector<std::size_t> group;
};

GradFixture grad_fixture() {
  GradFixture f;
  Rng rng(12);
  for (std::size_t g = 0; g < 3; ++g) {
    for (int k = 0; k < 2; ++k) {
      coles::Mat<double> x(4, coles::kFeatureDim);
      for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal(0.0, 0.5);
      f.inputs.push_back(x);
      f.group.push_back(g);
    }
  }
  return f;
}

double batch_loss(const coles::GruParams<double>& p, const GradFixture& f, double w_rep,
                  coles::GruParams<double>* grads) {
  coles::Mat<double> e(static_cast<Eigen::Index>(f.inputs.size()), p.hidden());
  std::vector<coles::GruCache<double>> caches;
  for (std::size_t i = 0; i < f.inputs.size(); ++i) {
    caches.push_back(coles::gru_forward(p, f.inputs[i]));
    e.row(static_cast<Eigen::Index>(i)) = caches.back().h;
  }
  const auto r = coles::contrastive_loss<double>(e, f.group, 0.5, w_rep);
  if (grads) {
    for (std::size_t i = 0; i < caches.size(); ++i) {
      coles::gru_backward(p, caches[i], coles::RowVec<double>(r.d_embeddings.row(static_cast<Eigen::Index>(i))),
                          *grads);
    }
  }
  return r.loss;
}

TEST(ColesGradient, MatchesFiniteDifferences) {
  auto p = coles::init_gru<double>(5, 0.3, 9);
  const auto f = grad_fixture();
  coles::GruParams<double> grads(5);
  batch_loss(p, f, 1.0, &grads);
  Rng rng(10);
  const auto& L = p.layout;
  double worst = 0.0;
  for (auto [off, n] : {std::pair{L.wx, L.uh - L.wx}, std::pair{L.uh, L.b - L.uh}, std::pair{L.b, L.cn - L.b},
                        std::pair{L.cn, L.total - L.cn}}) {
    for (std::size_t i : testing::sample_coordinates(off, n, 20, rng)) {
      const double numeric = testing::central_difference(p.data, i, [&] { return batch_loss(p, f, 1.0, nullptr); });
      worst = std::max(worst, testing::relative_error(grads.data[i], numeric));
    }
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(ColesGradient, ContrastiveLossGradientWrtEmbeddings) {
  Rng rng(13);
  coles::Mat<double> e(5, 4);
  for (Eigen::Index i = 0; i < e.size(); ++i) e.data()[i] = rng.normal();
  const std::vector<std::size_t> group = {0, 0, 1, 1, 2};
  const auto r = coles::contrastive_loss<double>(e, group, 0.2, 0.7);
  EXPECT_EQ(r.anchors, 4u);
  std::span<double> flat(e.data(), static_cast<std::size_t>(e.size()));
  for (Eigen::Index i = 0; i < e.size(); ++i) {
    const double numeric = testing::central_difference(
        flat, static_cast<std::size_t>(i), [&] { return coles::contrastive_loss<double>(e, group, 0.2, 0.7).loss; });
    EXPECT_LT(testing::relative_error(r.d_embeddings.data()[i], numeric), 1e-6) << i;
  }
}

TEST(ColesLoss, PureAttractionShrinksPairDistance) {
  auto p = coles::init_gru<double>(6, 0.3, 14);
  GradFixture f;
  Rng rng(15);
  for (int k = 0; k < 2; ++k) {
    coles::Mat<double> x(5, coles::kFeatureDim);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal(0.0, 0.5);
    f.inputs.push_back(x);
    f.group.push_back(0);
  }
  auto cosine_distance = [&] {
    const auto a = coles::gru_forward(p, f.inputs[0]).h;
    const auto b = coles::gru_forward(p, f.inputs[1]).h;
    return 1.0 - a.dot(b) / (a.norm() * b.norm());
  };
  double prev = cosine_distance();
  for (int step = 0; step < 50; ++step) {
    coles::GruParams<double> g(6);
    batch_loss(p, f, 0.0, &g);
    for (std::size_t k = 0; k < p.size(); ++k) p.data[k] -= 0.01 * g.data[k];
    const double now = cosine_distance();
    ASSERT_LT(now, prev) << "step " << step;
    prev = now;
  }
}

const std::vector<synth::Account>& coles_accounts() {
  static const auto accounts = [] {
    synth::GeneratorConfig g;
    g.n_accounts = 64;
    g.seed = 31;
    return synth::generate_corpus(g).accounts;
  }();
  return accounts;
}

TEST(ColesTraining, LossDecreasesOnFixedSample) {
  coles::ColesConfig cfg;
  cfg.hidden = 16;
  cfg.batch_accounts = 8;
  auto state = coles::init_state(cfg, 16);
  std::vector<const synth::Account*> batch;
  for (std::size_t i = 0; i < 8; ++i) batch.push_back(&coles_accounts()[i]);
  std::vector<std::size_t> lengths;
  for (const auto* a : batch) lengths.push_back(a->transactions.size());
  Rng rng(17);
  const auto sample = coles::sample_pairs(lengths, cfg, rng);
  double prev = coles::step_on_sample(state, batch, sample);
  for (int step = 1; step < 100; ++step) {
    const double loss = coles::step_on_sample(state, batch, sample);
    ASSERT_LT(loss, prev) << "step " << step;
    prev = loss;
  }
}

TEST(ColesTraining, TrainedRetrievalBeatsUntrainedAndChance) {
  coles::ColesConfig cfg;
  cfg.hidden = 32;
  cfg.batch_accounts = 16;
  cfg.steps = 1000;
  const auto untrained = coles::init_state(cfg, 18);
  auto state = untrained;
  coles::train(state, coles_accounts());
  EXPECT_EQ(state.step, 1000);

  std::vector<const synth::Account*> batch;
  for (const auto& a : coles_accounts()) batch.push_back(&a);
  double before = 0.0, after = 0.0;
  for (std::uint64_t rep = 0; rep < 4; ++rep) {
    Rng r1(100 + rep), r2(100 + rep);
    before += coles::retrieval_accuracy(untrained.params, batch, cfg.min_len, cfg.max_len, r1);
    after += coles::retrieval_accuracy(state.params, batch, cfg.min_len, cfg.max_len, r2);
  }
  before /= 4;
  after /= 4;
  std::size_t usable = 0;
  for (const auto* a : batch) usable += a->transactions.size() >= 10 ? 1 : 0;
  const double chance = 1.0 / (2.0 * static_cast<double>(usable) - 1.0);
  EXPECT_GT(after, before);
  EXPECT_GT(after, 2.0 * chance);
}

TEST(ColesTraining, CheckpointResumeIsBitIdentical) {
  coles::ColesConfig cfg;
  cfg.hidden = 8;
  cfg.batch_accounts = 4;
  cfg.steps = 6;
  auto straight = coles::init_state(cfg, 19);
  coles::train(straight, coles_accounts());
  auto half = coles::init_state(cfg, 19);
  coles::train(half, coles_accounts(), 1, 3);
  auto resumed = coles::from_checkpoint(ckpt::deserialize(ckpt::serialize(coles::to_checkpoint(half))));
  coles::train(resumed, coles_accounts());
  ASSERT_EQ(resumed.params.size(), straight.params.size());
  EXPECT_EQ(std::memcmp(resumed.params.data.data(), straight.params.data.data(), straight.params.size() * sizeof(float)),
            0);
  EXPECT_EQ(resumed.loss_history, straight.loss_history);
}

TEST(ColesTraining, ThreadCountDoesNotChangeResult) {
  coles::ColesConfig cfg;
  cfg.hidden = 8;
  cfg.batch_accounts = 4;
  cfg.steps = 3;
  auto one = coles::init_state(cfg, 20);
  auto three = one;
  coles::train(one, coles_accounts(), 1);
  coles::train(three, coles_accounts(), 3);
  EXPECT_EQ(std::memcmp(one.params.data.data(), three.params.data.data(), one.params.size() * sizeof(float)), 0);
}

TEST(ColesConfig, Validation) {
  coles::ColesConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.min_len = 50;
  cfg.max_len = 40;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = {};
  cfg.temperature = 0.0;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
}

}  // namespace
}  // namespace txlm
