#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "txlm/common.hpp"

namespace txlm {

enum class Direction : std::uint8_t { kDebit, kCredit };

inline std::string_view to_string(Direction d) {
  return d == Direction::kDebit ? "DEBIT" : "CREDIT";
}

inline Direction parse_direction(std::string_view s) {
  if (s == "DEBIT") return Direction::kDebit;
  if (s == "CREDIT") return Direction::kCredit;
  throw InvalidArgument("unknown direction: " + std::string(s));
}

// One bank event. Direction carries the sign; amount_cents is always > 0.
struct Transaction {
  std::int64_t timestamp = 0;  // seconds since epoch
  Direction direction = Direction::kDebit;
  std::int64_t amount_cents = 1;
  std::string description;

  // Credit positive, debit negative, in dollars.
  double signed_dollars() const {
    const double dollars = static_cast<double>(amount_cents) / 100.0;
    return direction == Direction::kCredit ? dollars : -dollars;
  }

  friend bool operator==(const Transaction&, const Transaction&) = default;
};

}  // namespace txlm
