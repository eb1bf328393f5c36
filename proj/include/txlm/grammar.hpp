#pragma once

// Transaction sentence language:
//
//   [TYPE] <DEBIT|CREDIT> [AMT] <AMT_lo_hi> [NAME] <description>
//
// An account document is its sentences in chronological order joined by
// " [SEP] ". Rendering is total; parsing is strict and inverts rendering.

#include <algorithm>
#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "txlm/common.hpp"
#include "txlm/transaction.hpp"

namespace txlm::grammar {

inline constexpr std::string_view kType = "[TYPE]";
inline constexpr std::string_view kAmt = "[AMT]";
inline constexpr std::string_view kName = "[NAME]";
inline constexpr std::string_view kSep = "[SEP]";
inline constexpr std::string_view kCls = "[CLS]";
inline constexpr std::string_view kMask = "[MASK]";
inline constexpr std::string_view kPad = "[PAD]";
inline constexpr std::string_view kEmptyDesc = "EMPTY_DESC";
inline constexpr std::string_view kSentenceJoin = " [SEP] ";

inline constexpr std::array<std::string_view, 7> kReservedMarkers = {
    kType, kAmt, kName, kSep, kCls, kMask, kPad};

class MalformedSentence : public Error {
 public:
  MalformedSentence(std::size_t position, const std::string& what)
      : Error("malformed sentence at position " + std::to_string(position) + ": " + what),
        position_(position) {}

  // Index of the offending sentence within its document.
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

struct BucketConfig {
  std::int64_t width_cents = 5000;
  std::int64_t max_index = 200;
};

struct AmountBucket {
  std::int64_t index = 0;
  std::int64_t width_cents = 5000;
  std::int64_t max_index = 200;

  std::int64_t lo_dollars() const { return index * width_cents / 100; }
  std::int64_t hi_dollars() const { return (index + 1) * width_cents / 100; }

  std::string token() const {
    std::string out = "AMT_" + std::to_string(lo_dollars()) + "_";
    out += index >= max_index ? std::string("INF") : std::to_string(hi_dollars());
    return out;
  }

  friend bool operator==(const AmountBucket&, const AmountBucket&) = default;
};

inline AmountBucket bucket_amount(std::int64_t amount_cents, const BucketConfig& cfg = {}) {
  if (amount_cents <= 0) throw InvalidArgument("amount must be positive");
  if (cfg.width_cents <= 0) throw InvalidArgument("bucket width must be positive");
  if (cfg.max_index < 0) throw InvalidArgument("max_index must be non-negative");
  return {std::min(amount_cents / cfg.width_cents, cfg.max_index), cfg.width_cents, cfg.max_index};
}

// Every bucket token in index order; used to pre-seed the vocabulary.
inline std::vector<std::string> all_bucket_tokens(const BucketConfig& cfg = {}) {
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(cfg.max_index + 1));
  for (std::int64_t i = 0; i <= cfg.max_index; ++i) {
    out.push_back(AmountBucket{i, cfg.width_cents, cfg.max_index}.token());
  }
  return out;
}

inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline bool contains_reserved_marker(std::string_view s) {
  return std::any_of(kReservedMarkers.begin(), kReservedMarkers.end(),
                     [&](std::string_view m) { return s.find(m) != std::string_view::npos; });
}

// Deletes reserved markers (repeatedly, since a deletion can splice a new one
// together), lowercases ASCII, collapses whitespace runs and trims. An empty
// result becomes EMPTY_DESC.
inline std::string normalize_description(std::string_view raw) {
  std::string s(raw);
  for (bool changed = true; changed;) {
    changed = false;
    for (std::string_view m : kReservedMarkers) {
      for (auto pos = s.find(m); pos != std::string::npos; pos = s.find(m)) {
        s.erase(pos, m.size());
        changed = true;
      }
    }
  }
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (char c : s) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : c);
  }
  if (out.empty()) return std::string(kEmptyDesc);
  return out;
}

struct Sentence {
  Direction direction = Direction::kDebit;
  AmountBucket amount;
  std::string description;  // already normalized

  std::string render() const {
    std::string out;
    out.reserve(32 + description.size());
    out.append(kType).append(" ").append(to_string(direction));
    out.append(" ").append(kAmt).append(" ").append(amount.token());
    out.append(" ").append(kName).append(" ").append(description);
    return out;
  }

  friend bool operator==(const Sentence&, const Sentence&) = default;
};

struct Document {
  std::string account_id;
  std::vector<Sentence> sentences;

  std::string render() const {
    std::string out;
    for (std::size_t i = 0; i < sentences.size(); ++i) {
      if (i > 0) out.append(kSentenceJoin);
      out.append(sentences[i].render());
    }
    return out;
  }

  friend bool operator==(const Document&, const Document&) = default;
};

inline Sentence serialize_transaction(const Transaction& t, const BucketConfig& cfg = {}) {
  return {t.direction, bucket_amount(t.amount_cents, cfg), normalize_description(t.description)};
}

inline Document serialize_document(std::string account_id, std::span<const Transaction> txns,
                                   const BucketConfig& cfg = {}) {
  if (txns.empty()) throw InvalidArgument("document needs at least one transaction");
  std::vector<const Transaction*> order;
  order.reserve(txns.size());
  for (const auto& t : txns) order.push_back(&t);
  std::stable_sort(order.begin(), order.end(), [](const Transaction* a, const Transaction* b) {
    return a->timestamp < b->timestamp;
  });
  Document doc{std::move(account_id), {}};
  doc.sentences.reserve(order.size());
  for (const Transaction* t : order) doc.sentences.push_back(serialize_transaction(*t, cfg));
  return doc;
}

namespace detail {

inline bool parse_int(std::string_view s, std::int64_t& out) {
  if (s.empty() || s.size() > 18) return false;
  if (s.size() > 1 && s[0] == '0') return false;
  std::int64_t v = 0;
  for (char c : s) {
    if (c < '0' || c > '9') return false;
    v = v * 10 + (c - '0');
  }
  out = v;
  return true;
}

inline bool consume(std::string_view& s, std::string_view prefix) {
  if (s.substr(0, prefix.size()) != prefix) return false;
  s.remove_prefix(prefix.size());
  return true;
}

inline std::string_view take_word(std::string_view& s) {
  const auto end = s.find(' ');
  std::string_view w = s.substr(0, end);
  s.remove_prefix(end == std::string_view::npos ? s.size() : end);
  return w;
}

}  // namespace detail

inline AmountBucket parse_bucket_token(std::string_view tok, const BucketConfig& cfg,
                                       std::size_t position = 0) {
  std::string_view s = tok;
  if (!detail::consume(s, "AMT_")) throw MalformedSentence(position, "bad amount token");
  const auto us = s.find('_');
  if (us == std::string_view::npos) throw MalformedSentence(position, "bad amount token");
  std::int64_t lo = 0;
  if (!detail::parse_int(s.substr(0, us), lo) || (lo * 100) % cfg.width_cents != 0) {
    throw MalformedSentence(position, "bad amount token");
  }
  const AmountBucket b{(lo * 100) / cfg.width_cents, cfg.width_cents, cfg.max_index};
  if (b.index > cfg.max_index || b.token() != tok) {
    throw MalformedSentence(position, "bad amount token: " + std::string(tok));
  }
  return b;
}

inline Sentence parse_sentence(std::string_view text, const BucketConfig& cfg = {},
                               std::size_t position = 0) {
  using detail::consume;
  using detail::take_word;
  std::string_view s = text;
  Sentence out;
  if (!consume(s, kType) || !consume(s, " ")) throw MalformedSentence(position, "expected [TYPE]");
  const std::string_view dir = take_word(s);
  if (dir == "DEBIT") {
    out.direction = Direction::kDebit;
  } else if (dir == "CREDIT") {
    out.direction = Direction::kCredit;
  } else {
    throw MalformedSentence(position, "unknown direction: " + std::string(dir));
  }
  if (!consume(s, " ") || !consume(s, kAmt) || !consume(s, " ")) {
    throw MalformedSentence(position, "expected [AMT]");
  }
  out.amount = parse_bucket_token(take_word(s), cfg, position);
  if (!consume(s, " ") || !consume(s, kName) || !consume(s, " ")) {
    throw MalformedSentence(position, "expected [NAME]");
  }
  if (s.empty()) throw MalformedSentence(position, "empty description");
  if (s != kEmptyDesc && normalize_description(s) != s) {
    throw MalformedSentence(position, "description is not normalized");
  }
  out.description = std::string(s);
  return out;
}

inline Document parse_document(std::string_view text, const BucketConfig& cfg = {},
                               std::string account_id = {}) {
  Document doc{std::move(account_id), {}};
  std::size_t position = 0;
  for (;;) {
    const auto cut = text.find(kSentenceJoin);
    doc.sentences.push_back(parse_sentence(text.substr(0, cut), cfg, position));
    if (cut == std::string_view::npos) break;
    text.remove_prefix(cut + kSentenceJoin.size());
    ++position;
  }
  return doc;
}

}  // namespace txlm::grammar
