#pragma once

#include <algorithm>
#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "txlm/common.hpp"
#include "txlm/synthgen.hpp"

namespace txlm {

enum class TaskGroup { kDemographics, kRisk, kBanking, kGeolocation };
enum class TaskKind { kBinary, kMulticlass };
enum class Metric { kAccuracy, kRocAuc, kPrAuc, kF1Macro };

inline std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::kAccuracy: return "accuracy";
    case Metric::kRocAuc: return "roc_auc";
    case Metric::kPrAuc: return "pr_auc";
    case Metric::kF1Macro: return "f1_macro";
  }
  return "?";
}

inline Metric parse_metric(std::string_view s) {
  for (Metric m : {Metric::kAccuracy, Metric::kRocAuc, Metric::kPrAuc, Metric::kF1Macro}) {
    if (to_string(m) == s) return m;
  }
  throw InvalidArgument("unknown metric: " + std::string(s));
}

inline std::string_view to_string(TaskGroup g) {
  switch (g) {
    case TaskGroup::kDemographics: return "demographics";
    case TaskGroup::kRisk: return "risk";
    case TaskGroup::kBanking: return "banking";
    case TaskGroup::kGeolocation: return "geolocation";
  }
  return "?";
}

struct TaskSpec {
  std::string_view id;
  TaskGroup group;
  TaskKind kind;
  int n_classes;
  std::vector<Metric> metrics;
  // Headline metric shown in the per-group report tables.
  Metric headline;
  // Negatives kept per positive when undersampling the training split.
  std::optional<int> undersample_ratio;
};

namespace detail {

inline std::vector<Metric> binary_metrics() {
  return {Metric::kAccuracy, Metric::kRocAuc, Metric::kPrAuc, Metric::kF1Macro};
}

inline std::vector<Metric> multiclass_metrics(bool with_roc) {
  std::vector<Metric> m{Metric::kAccuracy, Metric::kF1Macro};
  if (with_roc) m.push_back(Metric::kRocAuc);
  return m;
}

}  // namespace detail

// The nineteen downstream tasks in report order.
inline const std::vector<TaskSpec>& all_tasks() {
  using detail::binary_metrics;
  using detail::multiclass_metrics;
  using G = TaskGroup;
  using K = TaskKind;
  using M = Metric;
  static const std::vector<TaskSpec> tasks = {
      {"gender", G::kDemographics, K::kBinary, 2, binary_metrics(), M::kAccuracy, {}},
      {"1st_name", G::kDemographics, K::kMulticlass, 50, multiclass_metrics(true), M::kRocAuc, {}},
      {"age", G::kDemographics, K::kMulticlass, 9, multiclass_metrics(false), M::kAccuracy, {}},
      {"nsf", G::kRisk, K::kBinary, 2, binary_metrics(), M::kRocAuc, 4},
      {"stop", G::kRisk, K::kBinary, 2, binary_metrics(), M::kPrAuc, 4},
      {"unauth", G::kRisk, K::kBinary, 2, binary_metrics(), M::kPrAuc, 4},
      {"frozen", G::kRisk, K::kBinary, 2, binary_metrics(), M::kPrAuc, 4},
      {"suf", G::kRisk, K::kBinary, 2, binary_metrics(), M::kPrAuc, 4},
      {"ret", G::kRisk, K::kBinary, 2, binary_metrics(), M::kPrAuc, 4},
      {"debit_card", G::kBanking, K::kBinary, 2, binary_metrics(), M::kRocAuc, {}},
      {"inc", G::kBanking, K::kMulticlass, 50, multiclass_metrics(true), M::kRocAuc, {}},
      {"bal", G::kBanking, K::kMulticlass, 50, multiclass_metrics(true), M::kRocAuc, {}},
      {"fi", G::kBanking, K::kMulticlass, 50, multiclass_metrics(false), M::kF1Macro, {}},
      {"act_type", G::kBanking, K::kBinary, 2, binary_metrics(), M::kF1Macro, {}},
      {"act_prof", G::kBanking, K::kBinary, 2, binary_metrics(), M::kF1Macro, {}},
      {"state_1", G::kGeolocation, K::kMulticlass, 50, multiclass_metrics(false), M::kF1Macro, {}},
      {"city_1", G::kGeolocation, K::kMulticlass, 50, multiclass_metrics(false), M::kF1Macro, {}},
      {"state_2", G::kGeolocation, K::kMulticlass, 50, multiclass_metrics(false), M::kF1Macro, {}},
      {"city_2", G::kGeolocation, K::kMulticlass, 50, multiclass_metrics(false), M::kF1Macro, {}},
  };
  return tasks;
}

inline const TaskSpec& task_spec(std::string_view id) {
  const auto& tasks = all_tasks();
  auto it = std::find_if(tasks.begin(), tasks.end(), [&](const TaskSpec& t) { return t.id == id; });
  if (it == tasks.end()) throw InvalidArgument("unknown task_id: " + std::string(id));
  return *it;
}

// Ground-truth target of one task for one account.
inline int task_label(const synth::LatentProfile& p, std::string_view task_id) {
  using synth::kFrozen;
  using synth::kNsf;
  using synth::kStop;
  using synth::kUnauth;
  if (task_id == "gender") return p.gender;
  if (task_id == "1st_name") return p.first_name_id;
  if (task_id == "age") return p.age_bucket;
  if (task_id == "nsf") return p.has(kNsf) ? 1 : 0;
  if (task_id == "stop") return p.has(kStop) ? 1 : 0;
  if (task_id == "unauth") return p.has(kUnauth) ? 1 : 0;
  if (task_id == "frozen") return p.has(kFrozen) ? 1 : 0;
  if (task_id == "suf") return (p.has(kStop) || p.has(kUnauth) || p.has(kFrozen)) ? 0 : 1;
  if (task_id == "ret") return p.risk_flags != 0 ? 1 : 0;
  if (task_id == "debit_card") return p.has_debit_card ? 1 : 0;
  if (task_id == "inc") return p.income_bucket;
  if (task_id == "bal") return p.balance_bucket;
  if (task_id == "fi") return p.fi_id;
  if (task_id == "act_type") return static_cast<int>(p.account_type);
  if (task_id == "act_prof") return static_cast<int>(p.account_profile);
  if (task_id == "state_1") return p.state_id;
  if (task_id == "city_1") return p.city_id;
  if (task_id == "state_2") return p.state_id_alt;
  if (task_id == "city_2") return p.city_id_alt;
  throw InvalidArgument("unknown task_id: " + std::string(task_id));
}

inline std::vector<int> emit_labels(std::span<const synth::LatentProfile> labels, std::string_view task_id) {
  task_spec(task_id);
  std::vector<int> out;
  out.reserve(labels.size());
  for (const auto& p : labels) out.push_back(task_label(p, task_id));
  return out;
}

}  // namespace txlm
