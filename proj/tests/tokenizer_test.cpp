#include "txlm/tokenizer.hpp"

#include <gtest/gtest.h>

#include <string>
#include <vector>

#include "txlm/synthgen.hpp"

namespace txlm {
namespace {

std::vector<std::string> rendered_corpus(std::size_t n, std::uint64_t seed) {
  synth::GeneratorConfig cfg;
  cfg.n_accounts = n;
  cfg.seed = seed;
  const auto corpus = synth::generate_corpus(cfg);
  std::vector<std::string> lines;
  for (const auto& a : corpus.accounts) {
    lines.push_back(grammar::serialize_document(a.account_id, a.transactions).render());
  }
  return lines;
}

const std::vector<std::string>& corpus_lines() {
  static const auto lines = rendered_corpus(1000, 17);
  return lines;
}

const Vocabulary& corpus_vocab() {
  static const auto v = train_vocab(corpus_lines(), 8192, 2);
  return v;
}

std::vector<int> real_ids(const TokenSequence& s) {
  return {s.ids.begin(), s.ids.begin() + static_cast<std::ptrdiff_t>(s.length())};
}

TEST(TrainVocab, MicroCorpusMergeOrder) {
  const std::vector<std::string> lines = {"aaaa aaaa"};
  VocabTrainingReport report;
  const auto v = train_vocab(lines, 1000, 2, {}, &report);
  ASSERT_EQ(report.merges.size(), 2u);
  EXPECT_EQ(report.merges[0], (std::pair<std::string, std::string>{"a", "a"}));
  EXPECT_EQ(report.merges[1], (std::pair<std::string, std::string>{"aa", "aa"}));
  EXPECT_TRUE(v.contains("aa"));
  EXPECT_TRUE(v.contains("aaaa"));
}

TEST(TrainVocab, ReservedTokensAtFixedIds) {
  const auto& v = corpus_vocab();
  EXPECT_EQ(v.id("[PAD]"), token_id::kPad);
  EXPECT_EQ(v.id("[UNK]"), token_id::kUnk);
  EXPECT_EQ(v.id("[CLS]"), token_id::kCls);
  EXPECT_EQ(v.id("[SEP]"), token_id::kSep);
  EXPECT_EQ(v.id("[MASK]"), token_id::kMask);
  EXPECT_EQ(v.id("[TYPE]"), token_id::kType);
  EXPECT_EQ(v.id("[AMT]"), token_id::kAmt);
  EXPECT_EQ(v.id("[NAME]"), token_id::kName);
  EXPECT_EQ(v.id("DEBIT"), token_id::kDebit);
  EXPECT_EQ(v.id("CREDIT"), token_id::kCredit);
  EXPECT_EQ(v.id("EMPTY_DESC"), token_id::kEmptyDesc);
  const auto buckets = grammar::all_bucket_tokens();
  for (std::size_t i = 0; i < buckets.size(); ++i) {
    EXPECT_EQ(v.id(buckets[i]), token_id::kFirstBucket + static_cast<int>(i));
  }
  EXPECT_EQ(v.n_reserved(), token_id::kFirstBucket + 201);
}

TEST(TrainVocab, DeterministicRetraining) {
  const auto again = train_vocab(corpus_lines(), 8192, 2);
  EXPECT_EQ(again, corpus_vocab());
}

TEST(TrainVocab, RejectsTargetAtOrBelowReservedCount) {
  const std::vector<std::string> lines = {"x"};
  EXPECT_THROW(train_vocab(lines, 212, 2), InvalidArgument);
  EXPECT_THROW(train_vocab(std::vector<std::string>{}, 1000, 2), InvalidArgument);
}

TEST(TrainVocab, TextFileRoundTrip) {
  const auto& v = corpus_vocab();
  EXPECT_EQ(Vocabulary::from_text(v.to_text("config_hash=abc")), v);
  EXPECT_THROW(Vocabulary::from_text("garbage\n"), Error);
}

TEST(Encode, EmptyDescriptionSentence) {
  const auto& v = corpus_vocab();
  const auto s = encode("[TYPE] DEBIT [AMT] AMT_0_50 [NAME] EMPTY_DESC", v, 32);
  const std::vector<int> expected = {token_id::kCls,  token_id::kType,        token_id::kDebit, token_id::kAmt,
                                     token_id::kFirstBucket, token_id::kName, token_id::kEmptyDesc};
  EXPECT_EQ(real_ids(s), expected);
  EXPECT_EQ(s.ids.size(), 32u);
  EXPECT_EQ(s.attention_mask.size(), 32u);
  for (std::size_t i = expected.size(); i < 32; ++i) {
    EXPECT_EQ(s.ids[i], token_id::kPad);
    EXPECT_EQ(s.attention_mask[i], 0);
  }
}

TEST(Encode, TruncationKeepsNewestWholeSentences) {
  const auto& v = corpus_vocab();
  std::size_t checked = 0;
  for (const auto& line : corpus_lines()) {
    if (detail::tokenize(line, v).size() + 1 <= 512) continue;
    ++checked;
    const auto s = encode(line, v, 512);
    ASSERT_EQ(s.ids.size(), 512u);
    ASSERT_EQ(s.ids[0], token_id::kCls);
    // The kept text is a sentence-aligned suffix of the document.
    auto ids = real_ids(s);
    const std::string kept = decode(ids, v);
    ASSERT_TRUE(line.ends_with(kept));
    ASSERT_TRUE(kept.starts_with("[TYPE]"));
    const auto before = line.size() - kept.size();
    ASSERT_GE(before, 1u);
    EXPECT_TRUE(std::string_view(line).substr(0, before).ends_with(" [SEP] "));
    // No room for one more sentence.
    const std::string_view head = std::string_view(line).substr(0, before - 7);
    const auto cut = head.rfind(" [SEP] ");
    const auto previous = cut == std::string_view::npos ? head : head.substr(cut + 7);
    EXPECT_GT(s.length() + 1 + detail::tokenize(previous, v).size(), 512u);
  }
  EXPECT_GT(checked, 0u);
}

TEST(Encode, DecodeInvertsEncodeOnTrainingCorpus) {
  const auto& v = corpus_vocab();
  for (const auto& line : corpus_lines()) {
    const auto s = encode(line, v, 1 << 16);
    ASSERT_EQ(decode(s.ids, v), line);
  }
}

TEST(Encode, UnknownCharactersFallBackToUnk) {
  const auto& v = corpus_vocab();
  const auto s = encode("[TYPE] DEBIT [AMT] AMT_0_50 [NAME] \xe6\x97\xa5", v, 16);
  EXPECT_EQ(s.ids[6], token_id::kUnk);
}

TEST(Encode, MarkersStayAtomicWhenGlued) {
  const auto& v = corpus_vocab();
  const auto ids = detail::tokenize("abc[SEP]def [MASK]x", v);
  EXPECT_EQ(std::count(ids.begin(), ids.end(), token_id::kSep), 1);
  EXPECT_EQ(std::count(ids.begin(), ids.end(), token_id::kMask), 1);
  for (int id : ids) {
    if (id == token_id::kSep || id == token_id::kMask) continue;
    EXPECT_FALSE(v.is_reserved(id));
  }
}

TEST(Encode, Deterministic) {
  const auto& v = corpus_vocab();
  EXPECT_EQ(encode(corpus_lines()[5], v, 128).ids, encode(corpus_lines()[5], v, 128).ids);
}

TEST(Encode, UnkRateOnTrainingCorpus) {
  const auto& v = corpus_vocab();
  std::size_t unk = 0, total = 0;
  for (const auto& line : corpus_lines()) {
    for (int id : detail::tokenize(line, v)) {
      if (v.is_reserved(id) && id != token_id::kUnk) continue;
      ++total;
      unk += id == token_id::kUnk;
    }
  }
  EXPECT_LT(static_cast<double>(unk) / static_cast<double>(total), 0.001);
}

TEST(Decode, ClsAndPaddingOnly) {
  const std::vector<int> ids = {token_id::kCls, token_id::kPad, token_id::kPad};
  EXPECT_EQ(decode(ids, corpus_vocab()), "");
}

TEST(Decode, SingleSeparator) {
  const std::vector<int> ids = {token_id::kSep};
  EXPECT_EQ(decode(ids, corpus_vocab()), "[SEP]");
}

TEST(Decode, RejectsUnknownId) {
  const std::vector<int> ids = {corpus_vocab().size()};
  EXPECT_THROW(decode(ids, corpus_vocab()), InvalidArgument);
}

}  // namespace
}  // namespace txlm
