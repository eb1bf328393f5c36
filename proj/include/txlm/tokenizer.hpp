#pragma once

// Subword vocabulary for the transaction language.
//
// Structural tokens (markers, directions, amount buckets) are reserved atoms at
// fixed ids and are never produced or split by subword learning. Description
// words are learned with greedy pair merges (BPE-style) over raw characters;
// pieces are stored WordPiece-style, with non-initial pieces carrying a "##"
// prefix, and encoded by greedy longest match.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "txlm/common.hpp"
#include "txlm/grammar.hpp"

namespace txlm {

namespace token_id {
inline constexpr int kPad = 0;
inline constexpr int kUnk = 1;
inline constexpr int kCls = 2;
inline constexpr int kSep = 3;
inline constexpr int kMask = 4;
inline constexpr int kType = 5;
inline constexpr int kAmt = 6;
inline constexpr int kName = 7;
inline constexpr int kDebit = 8;
inline constexpr int kCredit = 9;
inline constexpr int kEmptyDesc = 10;
inline constexpr int kFirstBucket = 11;
}  // namespace token_id

inline constexpr std::string_view kContinuation = "##";
inline constexpr int kVocabFormatVersion = 1;

struct TokenSequence {
  std::vector<int> ids;
  std::vector<std::uint8_t> attention_mask;

  // Number of real (non-padding) tokens; padding is always a suffix.
  std::size_t length() const {
    return static_cast<std::size_t>(std::count(attention_mask.begin(), attention_mask.end(), 1));
  }
};

namespace detail {

// Splits UTF-8 text into code points (invalid bytes become single units).
inline std::vector<std::string> utf8_chars(std::string_view s) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t n = 1;
    if (c >= 0xF0) {
      n = 4;
    } else if (c >= 0xE0) {
      n = 3;
    } else if (c >= 0xC0) {
      n = 2;
    }
    if (i + n > s.size()) n = 1;
    for (std::size_t k = 1; k < n; ++k) {
      if ((static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) {
        n = 1;
        break;
      }
    }
    out.emplace_back(s.substr(i, n));
    i += n;
  }
  return out;
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && grammar::is_space(s[i])) ++i;
    std::size_t j = i;
    while (j < s.size() && !grammar::is_space(s[j])) ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace detail

class Vocabulary {
 public:
  Vocabulary() : Vocabulary(grammar::BucketConfig{}) {}

  explicit Vocabulary(const grammar::BucketConfig& buckets) : buckets_(buckets) {
    for (std::string_view t : {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "[TYPE]", "[AMT]", "[NAME]",
                               "DEBIT", "CREDIT", "EMPTY_DESC"}) {
      add(std::string(t));
    }
    for (auto& t : grammar::all_bucket_tokens(buckets_)) add(std::move(t));
    n_reserved_ = static_cast<int>(id_to_token_.size());
  }

  int size() const { return static_cast<int>(id_to_token_.size()); }
  int n_reserved() const { return n_reserved_; }
  const grammar::BucketConfig& buckets() const { return buckets_; }

  bool contains(std::string_view tok) const { return token_to_id_.count(std::string(tok)) != 0; }

  std::optional<int> find(std::string_view tok) const {
    auto it = token_to_id_.find(std::string(tok));
    if (it == token_to_id_.end()) return std::nullopt;
    return it->second;
  }

  int id(std::string_view tok) const {
    auto found = find(tok);
    if (!found) throw InvalidArgument("token not in vocabulary: " + std::string(tok));
    return *found;
  }

  const std::string& token(int id) const {
    if (id < 0 || id >= size()) throw InvalidArgument("unknown token id " + std::to_string(id));
    return id_to_token_[static_cast<std::size_t>(id)];
  }

  bool is_reserved(int id) const { return id >= 0 && id < n_reserved_; }

  // Positions holding these ids may be selected as MLM targets: direction,
  // amount bucket and description subwords. Markers, padding and [UNK] never.
  bool is_maskable(int id) const {
    return id == token_id::kDebit || id == token_id::kCredit || id >= token_id::kEmptyDesc;
  }

  bool is_bucket(int id) const { return id >= token_id::kFirstBucket && id < n_reserved_; }

  // Adds a token if absent and returns its id.
  int add(std::string tok) {
    auto it = token_to_id_.find(tok);
    if (it != token_to_id_.end()) return it->second;
    const int id = size();
    token_to_id_.emplace(tok, id);
    id_to_token_.push_back(std::move(tok));
    return id;
  }

  std::string to_text(const std::string& header_extra = {}) const {
    std::ostringstream out;
    out << "txlm-vocab v" << kVocabFormatVersion << " max_index=" << buckets_.max_index
        << " width_cents=" << buckets_.width_cents << " size=" << size();
    if (!header_extra.empty()) out << " " << header_extra;
    out << "\n";
    for (const auto& t : id_to_token_) out << t << "\n";
    return out.str();
  }

  static Vocabulary from_text(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string header;
    if (!std::getline(in, header)) throw Error("empty vocabulary file");
    std::istringstream hs(header);
    std::string magic, version;
    hs >> magic >> version;
    if (magic != "txlm-vocab" || version != "v" + std::to_string(kVocabFormatVersion)) {
      throw Error("unsupported vocabulary header: " + header);
    }
    grammar::BucketConfig buckets;
    long long declared_size = -1;
    for (std::string kv; hs >> kv;) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = kv.substr(0, eq);
      const std::string value = kv.substr(eq + 1);
      if (key == "max_index") buckets.max_index = std::stoll(value);
      if (key == "width_cents") buckets.width_cents = std::stoll(value);
      if (key == "size") declared_size = std::stoll(value);
    }
    Vocabulary v(buckets);
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line); ++line_no) {
      if (line_no < static_cast<std::size_t>(v.n_reserved_)) {
        if (line != v.id_to_token_[line_no]) throw Error("vocabulary reserved token mismatch at id " + std::to_string(line_no));
        continue;
      }
      if (v.contains(line)) throw Error("duplicate vocabulary token: " + line);
      v.add(line);
    }
    if (declared_size >= 0 && declared_size != v.size()) throw Error("vocabulary size mismatch");
    return v;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.id_to_token_ == b.id_to_token_ && a.buckets_.max_index == b.buckets_.max_index &&
           a.buckets_.width_cents == b.buckets_.width_cents;
  }

 private:
  grammar::BucketConfig buckets_;
  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
  int n_reserved_ = 0;
};

struct VocabTrainingReport {
  std::vector<std::pair<std::string, std::string>> merges;  // in learned order
};

// Learns a subword vocabulary from rendered documents (one per line).
inline Vocabulary train_vocab(std::span<const std::string> lines, int target_size, int min_frequency = 2,
                              const grammar::BucketConfig& buckets = {},
                              VocabTrainingReport* report = nullptr) {
  Vocabulary vocab(buckets);
  if (lines.empty()) throw InvalidArgument("vocabulary corpus is empty");
  if (target_size <= vocab.n_reserved()) {
    throw InvalidArgument("target_size must exceed the " + std::to_string(vocab.n_reserved()) +
                          " reserved tokens");
  }

  std::map<std::string, std::int64_t> word_counts;
  for (const auto& line : lines) {
    for (auto w : detail::split_ws(line)) {
      if (vocab.find(w) && vocab.is_reserved(*vocab.find(w))) continue;
      ++word_counts[std::string(w)];
    }
  }

  // Interned symbols.
  std::vector<std::string> symbols;
  std::unordered_map<std::string, int> symbol_id;
  auto intern = [&](const std::string& s) {
    auto [it, inserted] = symbol_id.emplace(s, static_cast<int>(symbols.size()));
    if (inserted) symbols.push_back(s);
    return it->second;
  };

  struct Word {
    std::vector<int> syms;
    std::int64_t count;
  };
  std::vector<Word> words;
  std::set<std::string> alphabet;
  for (const auto& [w, c] : word_counts) {
    Word word{{}, c};
    for (auto& ch : detail::utf8_chars(w)) {
      alphabet.insert(ch);
      word.syms.push_back(intern(ch));
    }
    words.push_back(std::move(word));
  }
  for (const auto& ch : alphabet) {
    if (vocab.size() >= target_size) break;
    vocab.add(ch);
  }
  for (const auto& ch : alphabet) {
    if (vocab.size() >= target_size) break;
    vocab.add(std::string(kContinuation) + ch);
  }

  using Pair = std::pair<int, int>;
  std::map<Pair, std::int64_t> pair_count;
  std::map<Pair, std::set<std::size_t>> pair_words;
  auto pair_less = [&](const std::pair<std::int64_t, Pair>& x, const std::pair<std::int64_t, Pair>& y) {
    if (x.first != y.first) return x.first > y.first;
    const auto& xa = symbols[static_cast<std::size_t>(x.second.first)];
    const auto& ya = symbols[static_cast<std::size_t>(y.second.first)];
    if (xa != ya) return xa < ya;
    return symbols[static_cast<std::size_t>(x.second.second)] < symbols[static_cast<std::size_t>(y.second.second)];
  };
  std::set<std::pair<std::int64_t, Pair>, decltype(pair_less)> ranked(pair_less);

  auto adjust = [&](const Pair& p, std::int64_t delta, std::size_t wi) {
    auto& c = pair_count[p];
    if (c > 0) ranked.erase({c, p});
    c += delta;
    if (c > 0) {
      ranked.insert({c, p});
      pair_words[p].insert(wi);
    }
  };
  for (std::size_t wi = 0; wi < words.size(); ++wi) {
    const auto& s = words[wi].syms;
    for (std::size_t i = 0; i + 1 < s.size(); ++i) adjust({s[i], s[i + 1]}, words[wi].count, wi);
  }

  while (vocab.size() < target_size && !ranked.empty()) {
    const auto [best_count, best] = *ranked.begin();
    if (best_count < min_frequency) break;
    const std::string merged = symbols[static_cast<std::size_t>(best.first)] +
                               symbols[static_cast<std::size_t>(best.second)];
    const int merged_id = intern(merged);
    if (report) report->merges.emplace_back(symbols[static_cast<std::size_t>(best.first)],
                                            symbols[static_cast<std::size_t>(best.second)]);
    bool initial = false;
    bool inner = false;
    const auto affected = pair_words[best];
    for (std::size_t wi : affected) {
      auto& s = words[wi].syms;
      const std::int64_t c = words[wi].count;
      for (std::size_t i = 0; i + 1 < s.size(); ++i) adjust({s[i], s[i + 1]}, -c, wi);
      std::vector<int> next;
      next.reserve(s.size());
      for (std::size_t i = 0; i < s.size();) {
        if (i + 1 < s.size() && s[i] == best.first && s[i + 1] == best.second) {
          (next.empty() ? initial : inner) = true;
          next.push_back(merged_id);
          i += 2;
        } else {
          next.push_back(s[i]);
          ++i;
        }
      }
      s = std::move(next);
      for (std::size_t i = 0; i + 1 < s.size(); ++i) adjust({s[i], s[i + 1]}, c, wi);
    }
    pair_words.erase(best);
    if (initial && vocab.size() < target_size && !merged.starts_with(kContinuation)) vocab.add(merged);
    if (inner && vocab.size() < target_size) vocab.add(std::string(kContinuation) + merged);
  }
  return vocab;
}

namespace detail {

// Greedy longest-match split of one description word.
inline void encode_word(std::string_view word, const Vocabulary& vocab, std::vector<int>& out) {
  const auto chars = utf8_chars(word);
  std::size_t start = 0;
  while (start < chars.size()) {
    int found = -1;
    std::size_t found_end = start;
    std::string candidate = start == 0 ? std::string() : std::string(kContinuation);
    std::vector<std::size_t> ends;
    for (std::size_t end = start; end < chars.size(); ++end) {
      candidate += chars[end];
      ends.push_back(candidate.size());
    }
    for (std::size_t k = ends.size(); k > 0; --k) {
      if (auto id = vocab.find(std::string_view(candidate).substr(0, ends[k - 1]))) {
        found = *id;
        found_end = start + k;
        break;
      }
    }
    if (found < 0) {
      out.push_back(token_id::kUnk);
      ++start;
    } else {
      out.push_back(found);
      start = found_end;
    }
  }
}

// Tokenizes free text: reserved tokens are atomic wherever they occur, the rest
// is split into subwords.
inline std::vector<int> tokenize(std::string_view text, const Vocabulary& vocab) {
  std::vector<int> out;
  for (auto w : split_ws(text)) {
    if (auto id = vocab.find(w); id && vocab.is_reserved(*id)) {
      out.push_back(*id);
      continue;
    }
    // Bracket markers glued to other characters are still atomic.
    while (!w.empty()) {
      std::size_t best_pos = std::string_view::npos;
      std::string_view best_marker;
      for (std::string_view m : grammar::kReservedMarkers) {
        const auto pos = w.find(m);
        if (pos < best_pos) {
          best_pos = pos;
          best_marker = m;
        }
      }
      if (best_pos == std::string_view::npos) {
        encode_word(w, vocab, out);
        break;
      }
      if (best_pos > 0) encode_word(w.substr(0, best_pos), vocab, out);
      out.push_back(vocab.id(best_marker));
      w.remove_prefix(best_pos + best_marker.size());
    }
  }
  return out;
}

}  // namespace detail

// Tokenizes a rendered document, prepends [CLS], keeps the most recent whole
// sentences that fit and pads to max_context.
inline TokenSequence encode(std::string_view document_text, const Vocabulary& vocab, std::size_t max_context) {
  if (max_context < 2) throw InvalidArgument("max_context must be >= 2");
  const std::vector<int> flat = detail::tokenize(document_text, vocab);
  std::vector<std::pair<std::size_t, std::size_t>> sentences;  // [begin, end) in flat, excluding [SEP]
  std::size_t begin = 0;
  for (std::size_t i = 0; i <= flat.size(); ++i) {
    if (i == flat.size() || flat[i] == token_id::kSep) {
      sentences.emplace_back(begin, i);
      begin = i + 1;
    }
  }

  const std::size_t budget = max_context - 1;
  std::size_t first = sentences.size();
  std::size_t used = 0;
  while (first > 0) {
    const auto& [b, e] = sentences[first - 1];
    const std::size_t cost = (e - b) + (first == sentences.size() ? 0 : 1);
    if (used + cost > budget) break;
    used += cost;
    --first;
  }

  TokenSequence seq;
  seq.ids.reserve(max_context);
  seq.ids.push_back(token_id::kCls);
  if (first == sentences.size()) {
    // Newest sentence alone overflows; keep its head.
    const auto& [b, e] = sentences.back();
    seq.ids.insert(seq.ids.end(), flat.begin() + static_cast<std::ptrdiff_t>(b),
                   flat.begin() + static_cast<std::ptrdiff_t>(std::min(e, b + budget)));
  } else {
    for (std::size_t s = first; s < sentences.size(); ++s) {
      if (s > first) seq.ids.push_back(token_id::kSep);
      const auto& [b, e] = sentences[s];
      seq.ids.insert(seq.ids.end(), flat.begin() + static_cast<std::ptrdiff_t>(b),
                     flat.begin() + static_cast<std::ptrdiff_t>(e));
    }
  }
  seq.attention_mask.assign(seq.ids.size(), 1);
  seq.ids.resize(max_context, token_id::kPad);
  seq.attention_mask.resize(max_context, 0);
  return seq;
}

inline std::string decode(std::span<const int> ids, const Vocabulary& vocab) {
  std::string out;
  for (int id : ids) {
    const std::string& tok = vocab.token(id);
    if (id == token_id::kCls || id == token_id::kPad) continue;
    if (!vocab.is_reserved(id) && tok.starts_with(kContinuation)) {
      out.append(tok, kContinuation.size());
      continue;
    }
    if (!out.empty()) out.push_back(' ');
    out.append(tok);
  }
  return out;
}

}  // namespace txlm
