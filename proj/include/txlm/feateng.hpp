#pragma once

// Handcrafted aggregation features over signed amounts (credits positive,
// debits negative, in dollars): sum, count, mean, min, max and population std,
// once over all transactions and once per direction. A direction with no
// transactions contributes zeros and a presence flag of 0.

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "txlm/common.hpp"
#include "txlm/transaction.hpp"

namespace txlm::feateng {

inline constexpr std::array<std::string_view, 6> kStats = {"sum", "count", "mean", "min", "max", "std"};
inline constexpr std::array<std::string_view, 3> kGroups = {"all", "debit", "credit"};

// Fixed feature order: for each group, the six statistics; then the two
// per-direction presence flags.
inline std::vector<std::string> schema() {
  std::vector<std::string> names;
  for (auto g : kGroups) {
    for (auto s : kStats) names.push_back(std::string(g) + "." + std::string(s));
  }
  names.push_back("debit.present");
  names.push_back("credit.present");
  return names;
}

inline std::size_t dimension() { return kGroups.size() * kStats.size() + 2; }

inline nlohmann::ordered_json schema_manifest() {
  nlohmann::ordered_json j;
  const auto names = schema();
  for (std::size_t i = 0; i < names.size(); ++i) j[names[i]] = i;
  return j;
}

namespace detail {

struct Accumulator {
  double sum = 0.0;
  std::size_t count = 0;
  double min = 0.0;
  double max = 0.0;
  std::vector<double> values;

  void add(double x) {
    min = count == 0 ? x : std::min(min, x);
    max = count == 0 ? x : std::max(max, x);
    sum += x;
    ++count;
    values.push_back(x);
  }

  // Two-pass population variance around the exact mean.
  void write(double* out) const {
    if (count == 0) {
      std::fill(out, out + kStats.size(), 0.0);
      return;
    }
    const double n = static_cast<double>(count);
    const double mean = sum / n;
    double ss = 0.0;
    for (double x : values) ss += (x - mean) * (x - mean);
    out[0] = sum;
    out[1] = n;
    out[2] = mean;
    out[3] = min;
    out[4] = max;
    out[5] = std::sqrt(ss / n);
  }
};

}  // namespace detail

inline std::vector<double> features(std::span<const Transaction> txns) {
  if (txns.empty()) throw InvalidArgument("feat_eng needs at least one transaction");
  detail::Accumulator all, debit, credit;
  for (const auto& t : txns) {
    const double x = t.signed_dollars();
    all.add(x);
    (t.direction == Direction::kDebit ? debit : credit).add(x);
  }
  std::vector<double> out(dimension());
  all.write(out.data());
  debit.write(out.data() + kStats.size());
  credit.write(out.data() + 2 * kStats.size());
  out[3 * kStats.size()] = debit.count > 0 ? 1.0 : 0.0;
  out[3 * kStats.size() + 1] = credit.count > 0 ? 1.0 : 0.0;
  return out;
}

}  // namespace txlm::feateng
