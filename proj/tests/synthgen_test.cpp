#include "txlm/synthgen.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "txlm/corpus_io.hpp"
#include "txlm/tasks.hpp"

namespace txlm::synth {
namespace {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Upper tail of chi-squared with k degrees of freedom (Wilson-Hilferty).
double chi2_sf(double x, double k) {
  const double a = 2.0 / (9.0 * k);
  const double z = (std::cbrt(x / k) - (1.0 - a)) / std::sqrt(a);
  return 1.0 - normal_cdf(z);
}

// Template key: description with digits and the "#" suffix marker removed.
std::string template_key(const std::string& desc) {
  std::string out;
  for (char c : desc) {
    if ((c >= '0' && c <= '9') || c == '#') continue;
    out.push_back(c);
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

// p-value of the gender x description-template contingency table.
double gender_independence_p(const Corpus& corpus) {
  std::map<std::string, std::array<double, 2>> table;
  std::array<double, 2> row{};
  for (std::size_t i = 0; i < corpus.accounts.size(); ++i) {
    const int g = corpus.labels[i].gender;
    for (const auto& t : corpus.accounts[i].transactions) {
      table[template_key(t.description)][static_cast<std::size_t>(g)] += 1.0;
      row[static_cast<std::size_t>(g)] += 1.0;
    }
  }
  const double total = row[0] + row[1];
  double chi2 = 0.0;
  int columns = 0;
  for (const auto& [key, counts] : table) {
    const double col = counts[0] + counts[1];
    if (col * std::min(row[0], row[1]) / total < 5.0) continue;
    ++columns;
    for (std::size_t g = 0; g < 2; ++g) {
      const double expected = col * row[g] / total;
      chi2 += (counts[g] - expected) * (counts[g] - expected) / expected;
    }
  }
  return chi2_sf(chi2, static_cast<double>(columns - 1));
}

TEST(SampleProfile, DeterministicForEqualStreams) {
  GeneratorConfig cfg;
  Rng a(0), b(0);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sample_profile(a, cfg), sample_profile(b, cfg));
}

TEST(SampleProfile, MarginalsMatchConfiguredRates) {
  GeneratorConfig cfg;
  Rng rng(123);
  const int n = 10000;
  std::map<std::string, double> hits;
  for (int i = 0; i < n; ++i) {
    const auto p = sample_profile(rng, cfg);
    validate_profile(p, cfg);
    hits["female"] += p.gender;
    hits["debit"] += p.has_debit_card;
    hits["savings"] += p.account_type == AccountType::kSavings;
    hits["business"] += p.account_profile == AccountProfile::kBusiness;
    hits["nsf"] += p.has(kNsf);
    hits["stop"] += p.has(kStop);
    hits["unauth"] += p.has(kUnauth);
    hits["frozen"] += p.has(kFrozen);
  }
  const std::map<std::string, double> rates = {
      {"female", cfg.p_female}, {"debit", cfg.p_debit_card}, {"savings", cfg.p_savings},
      {"business", cfg.p_business}, {"nsf", cfg.rate_nsf}, {"stop", cfg.rate_stop},
      {"unauth", cfg.rate_unauth}, {"frozen", cfg.rate_frozen}};
  for (const auto& [name, p] : rates) {
    const double sigma = std::sqrt(p * (1.0 - p) / n);
    EXPECT_NEAR(hits[name] / n, p, 3.0 * sigma) << name;
  }
}

TEST(SampleProfile, SingleStateCardinality) {
  GeneratorConfig cfg;
  cfg.n_states = 1;
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const auto p = sample_profile(rng, cfg);
    EXPECT_EQ(p.state_id, 0);
    EXPECT_EQ(p.state_id_alt, 0);
  }
}

TEST(GenerateHistory, NsfAccountCarriesNsfLineAtFullSignal) {
  GeneratorConfig cfg;
  cfg.signal_strength = 1.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    auto p = sample_profile(rng, cfg);
    p.risk_flags = kNsf;
    const auto h = generate_account_history(p, rng, cfg);
    const bool found = std::any_of(h.begin(), h.end(), [](const Transaction& t) {
      return std::find(pools::kNsfLines.begin(), pools::kNsfLines.end(), t.description) != pools::kNsfLines.end();
    });
    EXPECT_TRUE(found) << "seed " << seed << " length " << h.size();
  }
}

TEST(GenerateHistory, SortedAndWithinWindow) {
  GeneratorConfig cfg;
  Rng rng(9);
  for (int i = 0; i < 100; ++i) {
    const auto h = generate_account_history(sample_profile(rng, cfg), rng, cfg);
    ASSERT_FALSE(h.empty());
    for (std::size_t k = 0; k < h.size(); ++k) {
      EXPECT_GT(h[k].amount_cents, 0);
      EXPECT_FALSE(h[k].description.empty());
      EXPECT_GE(h[k].timestamp, cfg.window_start);
      EXPECT_LT(h[k].timestamp, cfg.window_start + cfg.window_seconds);
      if (k > 0) {
        EXPECT_LE(h[k - 1].timestamp, h[k].timestamp);
      }
    }
  }
}

TEST(GenerateHistory, RejectsOutOfRangeProfile) {
  GeneratorConfig cfg;
  Rng rng(1);
  auto p = sample_profile(rng, cfg);
  p.state_id = cfg.n_states;
  EXPECT_THROW(generate_account_history(p, rng, cfg), InvalidArgument);
}

TEST(GenerateHistory, ZeroSignalIsIndependentOfProfile) {
  GeneratorConfig cfg;
  cfg.n_accounts = 5000;
  cfg.seed = 77;
  cfg.signal_strength = 0.0;
  EXPECT_GT(gender_independence_p(generate_corpus(cfg)), 0.01);
}

TEST(GenerateHistory, FullSignalIsDetectedByTheSameTest) {
  // Power check for the independence oracle above.
  GeneratorConfig cfg;
  cfg.n_accounts = 2000;
  cfg.seed = 77;
  cfg.signal_strength = 1.0;
  EXPECT_LT(gender_independence_p(generate_corpus(cfg)), 1e-6);
}

class DefaultCorpus : public ::testing::Test {
 protected:
  static const Corpus& corpus() {
    static const Corpus c = [] {
      GeneratorConfig cfg;
      cfg.n_accounts = 10000;
      cfg.seed = 2024;
      return generate_corpus(cfg);
    }();
    return c;
  }

  static std::vector<std::int64_t> lengths() {
    std::vector<std::int64_t> out;
    for (const auto& a : corpus().accounts) out.push_back(static_cast<std::int64_t>(a.transactions.size()));
    return out;
  }
};

TEST_F(DefaultCorpus, MedianLengthBelow120) {
  auto l = lengths();
  std::nth_element(l.begin(), l.begin() + static_cast<std::ptrdiff_t>(l.size() / 2), l.end());
  EXPECT_LT(l[l.size() / 2], 120);
}

TEST_F(DefaultCorpus, AtMostTwoPercentAbove700) {
  const auto l = lengths();
  const auto long_ones = std::count_if(l.begin(), l.end(), [](std::int64_t n) { return n > 700; });
  EXPECT_LE(static_cast<double>(long_ones) / static_cast<double>(l.size()), 0.02);
}

TEST_F(DefaultCorpus, LengthsFollowConfiguredLogNormal) {
  const GeneratorConfig cfg;
  auto l = lengths();
  std::sort(l.begin(), l.end());
  const double n = static_cast<double>(l.size());
  double ks = 0.0;
  for (std::size_t i = 0; i < l.size(); ++i) {
    if (i + 1 < l.size() && l[i + 1] == l[i]) continue;
    // P(round(X) <= k) for X log-normal.
    const double k = static_cast<double>(l[i]);
    const double model = normal_cdf((std::log(k + 0.5) - cfg.length_log_median) / cfg.length_sigma);
    ks = std::max(ks, std::abs(static_cast<double>(i + 1) / n - model));
  }
  EXPECT_LT(ks, 0.05);
}

TEST(GenerateCorpus, Cardinality) {
  GeneratorConfig cfg;
  cfg.n_accounts = 3;
  const auto c = generate_corpus(cfg);
  EXPECT_EQ(c.accounts.size(), 3u);
  EXPECT_EQ(c.labels.size(), 3u);
  for (const auto& a : c.accounts) EXPECT_FALSE(a.transactions.empty());
}

TEST(GenerateCorpus, ByteIdenticalAcrossRunsAndThreadCounts) {
  GeneratorConfig cfg;
  cfg.n_accounts = 300;
  cfg.seed = 99;
  const auto a = generate_corpus(cfg, 1);
  const auto b = generate_corpus(cfg, 4);
  EXPECT_EQ(io::corpus_to_jsonl(a.accounts), io::corpus_to_jsonl(b.accounts));
  EXPECT_EQ(io::labels_to_jsonl(io::label_records(a)), io::labels_to_jsonl(io::label_records(b)));
  EXPECT_EQ(a.labels, b.labels);
}

TEST(GenerateCorpus, RejectsInvalidConfig) {
  GeneratorConfig cfg;
  cfg.signal_strength = 1.5;
  EXPECT_THROW(generate_corpus(cfg), InvalidArgument);
  cfg.signal_strength = 0.5;
  cfg.n_accounts = 0;
  EXPECT_THROW(generate_corpus(cfg), InvalidArgument);
}

TEST(CorpusIo, JsonLinesRoundTrip) {
  GeneratorConfig cfg;
  cfg.n_accounts = 50;
  const auto c = generate_corpus(cfg);
  std::istringstream in(io::corpus_to_jsonl(c.accounts, io::Provenance{"abc", 7}));
  const auto back = io::read_corpus(in);
  ASSERT_EQ(back.size(), c.accounts.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].account_id, c.accounts[i].account_id);
    EXPECT_EQ(back[i].transactions, c.accounts[i].transactions);
  }
  std::istringstream lin(io::labels_to_jsonl(io::label_records(c)));
  const auto labels = io::read_labels(lin);
  ASSERT_EQ(labels.size(), 50u);
  EXPECT_EQ(labels[0].values.size(), all_tasks().size());
}

LatentProfile with_flags(std::uint8_t flags) {
  LatentProfile p;
  p.risk_flags = flags;
  return p;
}

TEST(EmitLabels, NsfOnly) {
  const auto p = with_flags(kNsf);
  EXPECT_EQ(task_label(p, "ret"), 1);
  EXPECT_EQ(task_label(p, "suf"), 1);
  EXPECT_EQ(task_label(p, "nsf"), 1);
}

TEST(EmitLabels, NoFlags) {
  const auto p = with_flags(0);
  for (const char* t : {"nsf", "stop", "unauth", "frozen", "ret"}) EXPECT_EQ(task_label(p, t), 0) << t;
  EXPECT_EQ(task_label(p, "suf"), 1);
}

TEST(EmitLabels, StopAndFrozen) {
  const auto p = with_flags(kStop | kFrozen);
  EXPECT_EQ(task_label(p, "suf"), 0);
  EXPECT_EQ(task_label(p, "ret"), 1);
}

TEST(EmitLabels, DerivedTasksMatchDefinitionsForAllFlagSets) {
  for (std::uint8_t f = 0; f < 16; ++f) {
    const auto p = with_flags(f);
    const bool nsf = f & kNsf, stop = f & kStop, unauth = f & kUnauth, frozen = f & kFrozen;
    EXPECT_EQ(task_label(p, "suf"), !(stop || unauth || frozen));
    EXPECT_EQ(task_label(p, "ret"), nsf || stop || unauth || frozen);
  }
}

TEST(EmitLabels, UnknownTaskRejected) {
  std::vector<LatentProfile> labels(2);
  EXPECT_THROW(emit_labels(labels, "shoe_size"), InvalidArgument);
  EXPECT_EQ(emit_labels(labels, "gender").size(), 2u);
  EXPECT_EQ(all_tasks().size(), 19u);
}

}  // namespace
}  // namespace txlm::synth
