#pragma once

// Synthetic multi-account transaction corpus with planted account attributes.
//
// Each account draws a LatentProfile, then a history whose length follows a
// log-normal. For every labeled attribute the account is "signal-on" with
// probability signal_strength; signal-on attributes contribute descriptions
// (and for income/balance, amounts) drawn from attribute-specific template
// pools. Everything else is attribute-neutral noise, so at signal_strength 0
// the history is independent of the profile.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "txlm/common.hpp"
#include "txlm/parallel.hpp"
#include "txlm/transaction.hpp"

namespace txlm::synth {

enum RiskFlag : std::uint8_t {
  kNsf = 1u << 0,
  kStop = 1u << 1,
  kUnauth = 1u << 2,
  kFrozen = 1u << 3,
};

enum class AccountType : std::uint8_t { kChecking = 0, kSavings = 1 };
enum class AccountProfile : std::uint8_t { kPersonal = 0, kBusiness = 1 };

struct LatentProfile {
  int gender = 0;         // 0 male, 1 female; implied by first_name_id
  int first_name_id = 0;  // [0, n_first_names); first half of the pool is female
  int age_bucket = 0;     // [0, n_age_buckets)
  int state_id = 0;
  int city_id = 0;
  int state_id_alt = 0;  // second geolocation provider
  int city_id_alt = 0;
  int income_bucket = 0;
  int balance_bucket = 0;
  int fi_id = 0;
  AccountType account_type = AccountType::kChecking;
  AccountProfile account_profile = AccountProfile::kPersonal;
  bool has_debit_card = false;
  std::uint8_t risk_flags = 0;

  bool has(RiskFlag f) const { return (risk_flags & f) != 0; }

  friend bool operator==(const LatentProfile&, const LatentProfile&) = default;
};

struct GeneratorConfig {
  std::size_t n_accounts = 1000;
  std::uint64_t seed = 0;
  double signal_strength = 1.0;

  // Cardinalities.
  int n_states = 50;
  int n_cities = 50;
  int n_fis = 50;
  int n_quantiles = 50;
  int n_age_buckets = 9;
  int n_first_names = 50;

  // Marginals.
  double p_female = 0.5;
  double p_debit_card = 0.7;
  double p_savings = 0.25;
  double p_business = 0.2;
  double p_provider_agree = 0.9;
  std::array<double, 9> age_weights = {0.04, 0.18, 0.19, 0.17, 0.15, 0.13, 0.09, 0.04, 0.01};
  double rate_nsf = 0.08;
  double rate_stop = 0.02;
  double rate_unauth = 0.02;
  double rate_frozen = 0.01;

  // History length ~ round(LogNormal(log_median, sigma)), clamped to [1, max_length].
  double length_log_median = 4.1;  // exp(4.1) ~ 60 transactions
  double length_sigma = 1.0;
  std::int64_t max_length = 5000;

  // Fraction of slots that carry attribute signal when any attribute is on.
  double signal_slot_rate = 0.75;

  std::int64_t window_start = 1738368000;  // 2025-02-01T00:00:00Z
  std::int64_t window_seconds = 90LL * 86400;

  void validate() const {
    if (!(signal_strength >= 0.0 && signal_strength <= 1.0)) {
      throw InvalidArgument("signal_strength must be in [0, 1]");
    }
    if (n_accounts < 1) throw InvalidArgument("n_accounts must be >= 1");
    if (n_states < 1 || n_cities < 1 || n_fis < 1 || n_quantiles < 1) {
      throw InvalidArgument("cardinalities must be >= 1");
    }
    if (n_age_buckets < 1 || n_age_buckets > static_cast<int>(age_weights.size())) {
      throw InvalidArgument("n_age_buckets must be in [1, 9]");
    }
    if (n_first_names < 2 || n_first_names % 2 != 0) {
      throw InvalidArgument("n_first_names must be even and >= 2");
    }
    if (length_sigma <= 0.0 || max_length < 1) throw InvalidArgument("bad length distribution");
    if (window_seconds <= 0) throw InvalidArgument("window_seconds must be positive");
  }
};

struct Account {
  std::string account_id;
  std::vector<Transaction> transactions;
};

struct Corpus {
  std::vector<Account> accounts;
  std::vector<LatentProfile> labels;  // labels[i] belongs to accounts[i]
};

// ---------------------------------------------------------------------------
// Template pools.

namespace pools {

inline constexpr std::array<std::string_view, 50> kFirstNames = {
    // female
    "mary", "patricia", "jennifer", "linda", "elizabeth", "barbara", "susan", "jessica",
    "sarah", "karen", "lisa", "nancy", "betty", "sandra", "margaret", "ashley", "kimberly",
    "emily", "donna", "michelle", "carol", "amanda", "melissa", "deborah", "stephanie",
    // male
    "james", "robert", "john", "michael", "david", "william", "richard", "joseph", "thomas",
    "christopher", "charles", "daniel", "matthew", "anthony", "mark", "donald", "steven",
    "paul", "andrew", "joshua", "kenneth", "kevin", "brian", "george", "timothy"};

inline constexpr std::array<std::string_view, 50> kStates = {
    "al", "ak", "az", "ar", "ca", "co", "ct", "de", "fl", "ga", "hi", "id", "il",
    "in", "ia", "ks", "ky", "la", "me", "md", "ma", "mi", "mn", "ms", "mo", "mt",
    "ne", "nv", "nh", "nj", "nm", "ny", "nc", "nd", "oh", "ok", "or", "pa", "ri",
    "sc", "sd", "tn", "tx", "ut", "vt", "va", "wa", "wv", "wi", "wy"};

inline constexpr std::array<std::string_view, 50> kCities = {
    "springfield", "riverside", "fairview", "franklin", "greenville", "bristol", "clinton",
    "madison", "georgetown", "salem", "ashland", "burlington", "manchester", "oxford",
    "clayton", "dayton", "jackson", "milton", "newport", "arlington", "auburn", "dover",
    "hudson", "kingston", "lebanon", "marion", "mount vernon", "oakland", "plymouth",
    "richmond", "shelby", "troy", "winchester", "lexington", "columbia", "florence",
    "hamilton", "lancaster", "monroe", "princeton", "quincy", "raleigh", "savannah",
    "tucson", "urbana", "vienna", "waverly", "york", "zion", "eugene"};

inline constexpr std::array<std::string_view, 10> kFiPrefixes = {
    "first", "united", "citizens", "peoples", "pacific", "atlantic", "summit", "heritage",
    "liberty", "pioneer"};
inline constexpr std::array<std::string_view, 5> kFiSuffixes = {"bank", "savings", "federal cu",
                                                               "trust", "financial"};

inline std::string fi_name(int fi_id) {
  const auto i = static_cast<std::size_t>(fi_id);
  return std::string(kFiPrefixes[i % kFiPrefixes.size()]) + " " +
         std::string(kFiSuffixes[(i / kFiPrefixes.size()) % kFiSuffixes.size()]);
}

inline constexpr std::array<std::array<std::string_view, 3>, 9> kAgeTemplates = {{
    {"campus bookstore", "student union cafe", "university tuition pmt"},
    {"navient student loan", "spotify student", "gamestop"},
    {"daycare center tuition", "babies r us", "crate and barrel"},
    {"kids orthodontics", "little league fees", "minivan auto loan"},
    {"college savings plan", "golf club dues", "pottery barn"},
    {"retirement plan contrib", "cruise line deposit", "lawn care service"},
    {"medicare premium", "social security", "aarp membership"},
    {"medicare part d", "senior center", "pharmacy rx refill"},
    {"assisted living", "home care services", "hearing aid center"},
}};

inline constexpr std::array<std::string_view, 6> kGeoMerchants = {
    "coffee house", "city parking", "corner market", "gas station", "water dept", "diner"};
// Spending that leans on gender. Several distinct lines per side, so a model
// has to infer the latent from context rather than copy one token.
inline constexpr std::array<std::string_view, 12> kFemaleMerchants = {
    "ulta beauty", "sephora", "nail salon", "victorias secret", "anthropologie", "hair studio",
    "yoga studio", "bath body works", "lululemon", "jo ann fabrics", "bridal boutique", "spa retreat"};
inline constexpr std::array<std::string_view, 12> kMaleMerchants = {
    "barber shop", "mens wearhouse", "golf pro shop", "bass pro shops", "auto parts store", "sports bar",
    "hunting supply", "tractor supply", "harbor freight", "cigar lounge", "brew pub", "tackle shop"};

inline constexpr std::array<std::string_view, 6> kEmployers = {
    "acme corp", "globex", "initech", "umbrella inc", "stark industries", "wayne enterprises"};

inline constexpr std::array<std::string_view, 3> kNsfLines = {"nsf fee", "overdraft item fee",
                                                         "returned item fee"};
inline constexpr std::array<std::string_view, 2> kStopLines = {"stop payment fee",
                                                          "stop pmt order processed"};
inline constexpr std::array<std::string_view, 2> kUnauthLines = {"dispute credit adj",
                                                            "unauthorized ach reversal"};
inline constexpr std::array<std::string_view, 2> kFrozenLines = {"account hold legal process",
                                                            "levy processing fee"};

struct NeutralTemplate {
  std::string_view text;
  Direction direction;
  double median_dollars;
  double sigma;
  bool numeric_suffix;
};

inline constexpr std::array<NeutralTemplate, 44> kNeutral = {{
    {"walmart supercenter", Direction::kDebit, 45, 0.3, true},
    {"amazon mktplace pmts", Direction::kDebit, 30, 0.4, false},
    {"shell oil", Direction::kDebit, 40, 0.2, true},
    {"mcdonalds", Direction::kDebit, 11, 0.3, true},
    {"starbucks store", Direction::kDebit, 7, 0.3, true},
    {"target", Direction::kDebit, 60, 0.3, true},
    {"costco whse", Direction::kDebit, 170, 0.2, true},
    {"home depot", Direction::kDebit, 130, 0.3, true},
    {"kroger", Direction::kDebit, 75, 0.2, false},
    {"netflix.com", Direction::kDebit, 16, 0.05, false},
    {"spotify usa", Direction::kDebit, 11, 0.05, false},
    {"uber trip", Direction::kDebit, 22, 0.3, false},
    {"walgreens", Direction::kDebit, 18, 0.4, true},
    {"att bill payment", Direction::kDebit, 85, 0.1, false},
    {"verizon wireless", Direction::kDebit, 90, 0.1, false},
    {"comcast cable", Direction::kDebit, 125, 0.1, false},
    {"geico auto ins", Direction::kDebit, 180, 0.1, false},
    {"apple.com bill", Direction::kDebit, 10, 0.3, false},
    {"dollar general", Direction::kDebit, 15, 0.4, true},
    {"chipotle", Direction::kDebit, 14, 0.2, true},
    {"best buy", Direction::kDebit, 320, 0.3, true},
    {"trader joes", Direction::kDebit, 65, 0.2, true},
    {"electric utility pmt", Direction::kDebit, 140, 0.2, false},
    {"paypal inst xfer", Direction::kDebit, 60, 0.5, false},
    {"online transfer from ext", Direction::kCredit, 375, 0.2, false},
    {"mobile deposit", Direction::kCredit, 225, 0.3, false},
    {"refund merchandise", Direction::kCredit, 35, 0.4, false},
    {"paypal transfer", Direction::kCredit, 80, 0.4, false},
    {"venmo cashout", Direction::kCredit, 60, 0.4, false},
    {"cash app cash in", Direction::kCredit, 40, 0.4, false},
    {"irs treas tax ref", Direction::kCredit, 1400, 0.2, false},
    {"cashback rewards", Direction::kCredit, 20, 0.3, false},
    {"expense reimbursement", Direction::kCredit, 160, 0.3, false},
    {"insurance claim pmt", Direction::kCredit, 600, 0.2, false},
    {"ebay seller payout", Direction::kCredit, 90, 0.4, true},
    {"etsy deposit", Direction::kCredit, 55, 0.4, false},
    {"rent received", Direction::kCredit, 1200, 0.1, false},
    {"atm cash deposit", Direction::kCredit, 260, 0.3, true},
    {"doordash driver pay", Direction::kCredit, 110, 0.3, false},
    {"uber driver earnings", Direction::kCredit, 140, 0.3, false},
    {"interest payment", Direction::kCredit, 2, 0.5, false},
    {"ach credit", Direction::kCredit, 310, 0.3, true},
    {"deposit reversal", Direction::kCredit, 45, 0.3, false},
    {"state tax refund", Direction::kCredit, 450, 0.2, false},
}};

}  // namespace pools

// Signal-bearing attribute groups, in guarantee priority order.
enum class Attribute : std::uint8_t {
  kNsf,
  kStop,
  kUnauth,
  kFrozen,
  kName,
  kGeo,
  kAge,
  kIncome,
  kBalance,
  kFi,
  kAccountType,
  kAccountProfile,
  kDebitCard,
};
inline constexpr std::size_t kNumAttributes = 13;

// Relative slot weight of each attribute among signal slots.
inline constexpr std::array<double, kNumAttributes> kAttributeWeight = {
    1.0, 1.0, 1.0, 1.0, 8.0, 8.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0};

// ---------------------------------------------------------------------------

namespace detail {

inline std::size_t pick_weighted(std::span<const double> w, Rng& rng) {
  double total = 0.0;
  for (double x : w) total += x;
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (u < w[i]) return i;
    u -= w[i];
  }
  return w.size() - 1;
}

inline std::int64_t cents_from_dollars(double dollars) {
  return std::max<std::int64_t>(1, std::llround(dollars * 100.0));
}

inline std::int64_t lognormal_cents(double median_dollars, double sigma, Rng& rng) {
  return cents_from_dollars(median_dollars * std::exp(sigma * rng.normal()));
}

inline std::string digits(Rng& rng, int n) {
  std::string s;
  for (int i = 0; i < n; ++i) s.push_back(static_cast<char>('0' + rng.below(10)));
  return s;
}

struct Draft {
  Direction direction;
  std::int64_t amount_cents;
  std::string description;
};

inline Draft neutral_draft(Rng& rng) {
  const auto& t = pools::kNeutral[rng.below(pools::kNeutral.size())];
  std::string desc(t.text);
  if (t.numeric_suffix && rng.bernoulli(0.5)) desc += " #" + digits(rng, 4);
  return {t.direction, lognormal_cents(t.median_dollars, t.sigma, rng), std::move(desc)};
}

template <std::size_t N>
std::string_view pick(const std::array<std::string_view, N>& pool, Rng& rng) {
  return pool[rng.below(N)];
}

inline Draft attribute_draft(Attribute a, const LatentProfile& p, Rng& rng) {
  using namespace pools;
  switch (a) {
    case Attribute::kNsf:
      return {Direction::kDebit, lognormal_cents(35, 0.05, rng), std::string(pick(kNsfLines, rng))};
    case Attribute::kStop:
      return {Direction::kDebit, lognormal_cents(30, 0.05, rng), std::string(pick(kStopLines, rng))};
    case Attribute::kUnauth:
      return {Direction::kCredit, lognormal_cents(90, 0.3, rng), std::string(pick(kUnauthLines, rng))};
    case Attribute::kFrozen:
      return {Direction::kDebit, lognormal_cents(100, 0.3, rng), std::string(pick(kFrozenLines, rng))};
    case Attribute::kName: {
      if (rng.bernoulli(0.75)) {
        const auto& pool = p.gender == 1 ? kFemaleMerchants : kMaleMerchants;
        std::string merchant(pick(pool, rng));
        if (rng.bernoulli(0.5)) return {Direction::kDebit, lognormal_cents(80, 0.6, rng), std::move(merchant)};
        return {Direction::kCredit, lognormal_cents(30, 0.6, rng), std::move(merchant) + " refund"};
      }
      const std::string name(kFirstNames[static_cast<std::size_t>(p.first_name_id) % kFirstNames.size()]);
      switch (rng.below(4)) {
        case 0:
          return {Direction::kCredit, lognormal_cents(60, 0.3, rng), "zelle from " + name};
        case 1:
          return {Direction::kDebit, lognormal_cents(40, 0.3, rng), "venmo payment " + name};
        case 2:
          return {Direction::kCredit, lognormal_cents(175, 0.3, rng), "mobile transfer from " + name};
        default:
          return {Direction::kDebit, lognormal_cents(125, 0.3, rng), "transfer to " + name + " savings"};
      }
    }
    case Attribute::kGeo: {
      const std::string place =
          std::string(kCities[static_cast<std::size_t>(p.city_id) % kCities.size()]) + " " +
          std::string(kStates[static_cast<std::size_t>(p.state_id) % kStates.size()]);
      std::string desc = std::string(pick(kGeoMerchants, rng)) + " " + place;
      if (rng.bernoulli(0.5)) return {Direction::kDebit, lognormal_cents(25, 0.3, rng), std::move(desc)};
      return {Direction::kCredit, lognormal_cents(15, 0.3, rng), std::move(desc) + " refund"};
    }
    case Attribute::kAge: {
      const auto& pool = kAgeTemplates[static_cast<std::size_t>(p.age_bucket) % kAgeTemplates.size()];
      const std::size_t i = rng.below(pool.size());
      const Direction dir = i == 1 ? Direction::kCredit : Direction::kDebit;
      return {dir, lognormal_cents(80, 0.3, rng), std::string(pool[i])};
    }
    case Attribute::kIncome: {
      const double dollars = (600.0 + 90.0 * p.income_bucket) * std::exp(0.05 * rng.normal());
      return {Direction::kCredit, cents_from_dollars(dollars),
              "payroll deposit " + std::string(pick(kEmployers, rng))};
    }
    case Attribute::kBalance: {
      const double dollars = 25.0 * (p.balance_bucket + 1) * std::exp(0.08 * rng.normal());
      if (rng.bernoulli(0.5)) return {Direction::kDebit, cents_from_dollars(dollars), "online transfer to savings"};
      return {Direction::kCredit, cents_from_dollars(dollars), "online transfer from savings"};
    }
    case Attribute::kFi: {
      static constexpr std::array<std::string_view, 3> kFiLines = {"atm withdrawal", "monthly service fee",
                                                                   "mobile check deposit"};
      const std::size_t i = rng.below(kFiLines.size());
      return {i == 2 ? Direction::kCredit : Direction::kDebit, lognormal_cents(i == 1 ? 12 : 120, 0.3, rng),
              fi_name(p.fi_id) + " " + std::string(kFiLines[i])};
    }
    case Attribute::kAccountType:
      if (p.account_type == AccountType::kSavings) {
        return rng.bernoulli(0.5)
                   ? Draft{Direction::kCredit, lognormal_cents(4, 0.3, rng), "interest earned"}
                   : Draft{Direction::kCredit, lognormal_cents(150, 0.3, rng), "transfer from checking"};
      }
      return rng.bernoulli(0.5)
                 ? Draft{Direction::kDebit, lognormal_cents(200, 0.3, rng), "check paid " + digits(rng, 4)}
                 : Draft{Direction::kCredit, lognormal_cents(300, 0.3, rng), "checking deposit"};
    case Attribute::kAccountProfile: {
      static constexpr std::array<std::string_view, 3> kBusiness = {"merchant services deposit",
                                                                    "adp payroll service", "irs eftps tax pmt"};
      static constexpr std::array<std::string_view, 3> kPersonal = {"personal loan pmt", "family cell plan",
                                                                    "personal loan disbursement"};
      if (p.account_profile == AccountProfile::kBusiness) {
        const std::size_t i = rng.below(kBusiness.size());
        return {i == 0 ? Direction::kCredit : Direction::kDebit, lognormal_cents(900, 0.3, rng),
                std::string(kBusiness[i])};
      }
      const std::size_t i = rng.below(kPersonal.size());
      return {i == 2 ? Direction::kCredit : Direction::kDebit, lognormal_cents(i == 2 ? 2000 : 70, 0.3, rng),
              std::string(kPersonal[i])};
    }
    case Attribute::kDebitCard:
      if (p.has_debit_card) {
        return rng.bernoulli(0.5) ? Draft{Direction::kDebit, lognormal_cents(30, 0.3, rng), "pos debit card purchase"}
                                  : Draft{Direction::kCredit, lognormal_cents(20, 0.3, rng), "pos debit card return"};
      }
      return rng.bernoulli(0.5) ? Draft{Direction::kDebit, lognormal_cents(100, 0.3, rng), "teller withdrawal branch"}
                                : Draft{Direction::kCredit, lognormal_cents(150, 0.3, rng), "teller deposit branch"};
  }
  return neutral_draft(rng);
}

inline bool attribute_applies(Attribute a, const LatentProfile& p) {
  switch (a) {
    case Attribute::kNsf: return p.has(kNsf);
    case Attribute::kStop: return p.has(kStop);
    case Attribute::kUnauth: return p.has(kUnauth);
    case Attribute::kFrozen: return p.has(kFrozen);
    default: return true;
  }
}

}  // namespace detail

inline std::string account_id_for(std::size_t index) {
  std::string digits = std::to_string(index);
  if (digits.size() < 7) digits.insert(0, 7 - digits.size(), '0');
  return "acct_" + digits;
}

inline LatentProfile sample_profile(Rng& rng, const GeneratorConfig& cfg) {
  LatentProfile p;
  const int half = cfg.n_first_names / 2;
  p.gender = rng.bernoulli(cfg.p_female) ? 1 : 0;
  p.first_name_id = static_cast<int>(rng.below(static_cast<std::uint64_t>(half))) + (p.gender == 1 ? 0 : half);
  p.age_bucket = static_cast<int>(detail::pick_weighted(
      std::span<const double>(cfg.age_weights.data(), static_cast<std::size_t>(cfg.n_age_buckets)), rng));
  p.state_id = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.n_states)));
  p.city_id = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.n_cities)));
  const bool agree = rng.bernoulli(cfg.p_provider_agree);
  const auto alt_state = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.n_states)));
  const auto alt_city = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.n_cities)));
  p.state_id_alt = agree ? p.state_id : alt_state;
  p.city_id_alt = agree ? p.city_id : alt_city;
  p.income_bucket = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.n_quantiles)));
  p.balance_bucket = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.n_quantiles)));
  p.fi_id = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.n_fis)));
  p.account_type = rng.bernoulli(cfg.p_savings) ? AccountType::kSavings : AccountType::kChecking;
  p.account_profile = rng.bernoulli(cfg.p_business) ? AccountProfile::kBusiness : AccountProfile::kPersonal;
  p.has_debit_card = rng.bernoulli(cfg.p_debit_card);
  if (rng.bernoulli(cfg.rate_nsf)) p.risk_flags |= kNsf;
  if (rng.bernoulli(cfg.rate_stop)) p.risk_flags |= kStop;
  if (rng.bernoulli(cfg.rate_unauth)) p.risk_flags |= kUnauth;
  if (rng.bernoulli(cfg.rate_frozen)) p.risk_flags |= kFrozen;
  return p;
}

inline void validate_profile(const LatentProfile& p, const GeneratorConfig& cfg) {
  auto in = [](int v, int n) { return v >= 0 && v < n; };
  const bool ok = in(p.gender, 2) && in(p.first_name_id, cfg.n_first_names) &&
                  in(p.age_bucket, cfg.n_age_buckets) && in(p.state_id, cfg.n_states) &&
                  in(p.city_id, cfg.n_cities) && in(p.state_id_alt, cfg.n_states) &&
                  in(p.city_id_alt, cfg.n_cities) && in(p.income_bucket, cfg.n_quantiles) &&
                  in(p.balance_bucket, cfg.n_quantiles) && in(p.fi_id, cfg.n_fis) &&
                  (p.risk_flags & ~0x0fu) == 0 &&
                  (p.gender == 1) == (p.first_name_id < cfg.n_first_names / 2);
  if (!ok) throw InvalidArgument("profile field outside configured cardinality");
}

inline std::int64_t sample_length(Rng& rng, const GeneratorConfig& cfg) {
  const double x = std::exp(cfg.length_log_median + cfg.length_sigma * rng.normal());
  return std::clamp<std::int64_t>(std::llround(x), 1, cfg.max_length);
}

inline std::vector<Transaction> generate_account_history(const LatentProfile& profile, Rng& rng,
                                                         const GeneratorConfig& cfg) {
  validate_profile(profile, cfg);
  const auto n = static_cast<std::size_t>(sample_length(rng, cfg));

  std::array<bool, kNumAttributes> on{};
  std::array<double, kNumAttributes> weights{};
  bool any_on = false;
  for (std::size_t a = 0; a < kNumAttributes; ++a) {
    const bool draw = rng.bernoulli(cfg.signal_strength);
    on[a] = draw && detail::attribute_applies(static_cast<Attribute>(a), profile);
    weights[a] = on[a] ? kAttributeWeight[a] : 0.0;
    any_on = any_on || on[a];
  }

  std::vector<detail::Draft> drafts;
  std::vector<int> source(n, -1);  // attribute index per slot, -1 for neutral
  drafts.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (any_on && rng.bernoulli(cfg.signal_slot_rate)) {
      const std::size_t a = detail::pick_weighted(weights, rng);
      source[i] = static_cast<int>(a);
      drafts.push_back(detail::attribute_draft(static_cast<Attribute>(a), profile, rng));
    } else {
      drafts.push_back(detail::neutral_draft(rng));
    }
  }

  // Guarantee one occurrence per signal-on attribute, in priority order, by
  // overwriting slots that are not already the sole carrier of another one.
  std::array<int, kNumAttributes> count{};
  for (int s : source) {
    if (s >= 0) ++count[static_cast<std::size_t>(s)];
  }
  for (std::size_t a = 0; a < kNumAttributes; ++a) {
    if (!on[a] || count[a] > 0) continue;
    std::vector<std::size_t> free_slots;
    for (std::size_t i = 0; i < n; ++i) {
      if (source[i] < 0 || count[static_cast<std::size_t>(source[i])] > 1) free_slots.push_back(i);
    }
    if (free_slots.empty()) break;
    const std::size_t slot = free_slots[rng.below(free_slots.size())];
    if (source[slot] >= 0) --count[static_cast<std::size_t>(source[slot])];
    source[slot] = static_cast<int>(a);
    ++count[a];
    drafts[slot] = detail::attribute_draft(static_cast<Attribute>(a), profile, rng);
  }

  std::vector<std::int64_t> times(n);
  for (auto& t : times) t = cfg.window_start + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(cfg.window_seconds)));
  std::sort(times.begin(), times.end());

  std::vector<Transaction> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({times[i], drafts[i].direction, drafts[i].amount_cents, std::move(drafts[i].description)});
  }
  return out;
}

// Per-account stream: independent of generation order and thread count.
inline std::uint64_t account_seed(std::uint64_t master_seed, std::size_t index) {
  return derive_seed(master_seed, fnv1a64(account_id_for(index)));
}

inline Corpus generate_corpus(const GeneratorConfig& cfg, std::size_t threads = 1) {
  cfg.validate();
  Corpus corpus;
  corpus.accounts.resize(cfg.n_accounts);
  corpus.labels.resize(cfg.n_accounts);
  parallel_for(cfg.n_accounts, threads, [&](std::size_t i) {
    Rng rng(account_seed(cfg.seed, i));
    corpus.labels[i] = sample_profile(rng, cfg);
    corpus.accounts[i].account_id = account_id_for(i);
    corpus.accounts[i].transactions = generate_account_history(corpus.labels[i], rng, cfg);
  });
  return corpus;
}

}  // namespace txlm::synth
