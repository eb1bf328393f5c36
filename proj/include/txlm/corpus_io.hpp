#pragma once

// JSON-lines files for corpora and labels.
//
//   corpus: {"account_id": str, "transactions": [{"ts": int, "dir": "DEBIT"|"CREDIT",
//                                                  "amount_cents": int, "desc": str}]}
//   labels: {"account_id": str, "labels": {task_id: int}}
//
// Writers may emit a leading provenance record {"_meta": {...}}; readers skip
// any line whose object carries "_meta".

#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "txlm/common.hpp"
#include "txlm/synthgen.hpp"
#include "txlm/tasks.hpp"

namespace txlm::io {

struct Provenance {
  std::string config_hash;
  std::uint64_t seed = 0;
};

// account_id -> task_id -> value
struct LabelRecord {
  std::string account_id;
  std::map<std::string, int> values;
};

inline nlohmann::ordered_json meta_record(const Provenance& p) {
  nlohmann::ordered_json j;
  j["_meta"]["config_hash"] = p.config_hash;
  j["_meta"]["seed"] = p.seed;
  return j;
}

inline nlohmann::ordered_json account_to_json(const synth::Account& a) {
  nlohmann::ordered_json j;
  j["account_id"] = a.account_id;
  auto& arr = j["transactions"] = nlohmann::ordered_json::array();
  for (const auto& t : a.transactions) {
    nlohmann::ordered_json tj;
    tj["ts"] = t.timestamp;
    tj["dir"] = std::string(to_string(t.direction));
    tj["amount_cents"] = t.amount_cents;
    tj["desc"] = t.description;
    arr.push_back(std::move(tj));
  }
  return j;
}

inline synth::Account account_from_json(const nlohmann::json& j) {
  synth::Account a;
  a.account_id = j.at("account_id").get<std::string>();
  for (const auto& tj : j.at("transactions")) {
    Transaction t;
    t.timestamp = tj.at("ts").get<std::int64_t>();
    t.direction = parse_direction(tj.at("dir").get<std::string>());
    t.amount_cents = tj.at("amount_cents").get<std::int64_t>();
    if (t.amount_cents <= 0) throw InvalidArgument("amount_cents must be positive in " + a.account_id);
    t.description = tj.at("desc").get<std::string>();
    a.transactions.push_back(std::move(t));
  }
  return a;
}

inline std::string corpus_to_jsonl(const std::vector<synth::Account>& accounts,
                                   const std::optional<Provenance>& prov = {}) {
  std::string out;
  if (prov) out += meta_record(*prov).dump() + "\n";
  for (const auto& a : accounts) out += account_to_json(a).dump() + "\n";
  return out;
}

inline std::vector<LabelRecord> label_records(const synth::Corpus& corpus) {
  std::vector<LabelRecord> out;
  out.reserve(corpus.accounts.size());
  for (std::size_t i = 0; i < corpus.accounts.size(); ++i) {
    LabelRecord r{corpus.accounts[i].account_id, {}};
    for (const auto& task : all_tasks()) r.values[std::string(task.id)] = task_label(corpus.labels[i], task.id);
    out.push_back(std::move(r));
  }
  return out;
}

inline std::string labels_to_jsonl(const std::vector<LabelRecord>& records,
                                   const std::optional<Provenance>& prov = {}) {
  std::string out;
  if (prov) out += meta_record(*prov).dump() + "\n";
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["account_id"] = r.account_id;
    auto& lj = j["labels"] = nlohmann::ordered_json::object();
    for (const auto& task : all_tasks()) {
      auto it = r.values.find(std::string(task.id));
      if (it != r.values.end()) lj[std::string(task.id)] = it->second;
    }
    out += j.dump() + "\n";
  }
  return out;
}

template <typename Fn>
void for_each_record(std::istream& in, Fn&& fn) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error("line " + std::to_string(lineno) + ": " + e.what());
    }
    if (j.contains("_meta")) continue;
    fn(j);
  }
}

inline std::vector<synth::Account> read_corpus(std::istream& in) {
  std::vector<synth::Account> out;
  for_each_record(in, [&](const nlohmann::json& j) { out.push_back(account_from_json(j)); });
  return out;
}

inline std::vector<LabelRecord> read_labels(std::istream& in) {
  std::vector<LabelRecord> out;
  for_each_record(in, [&](const nlohmann::json& j) {
    LabelRecord r{j.at("account_id").get<std::string>(), {}};
    for (const auto& [k, v] : j.at("labels").items()) r.values[k] = v.get<int>();
    out.push_back(std::move(r));
  });
  return out;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return in;
}

inline void write_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out << contents;
  if (!out) throw Error("write failed: " + path);
}

inline std::string read_file(const std::string& path) {
  auto in = open_in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::vector<synth::Account> read_corpus_file(const std::string& path) {
  auto in = open_in(path);
  return read_corpus(in);
}

inline std::vector<LabelRecord> read_labels_file(const std::string& path) {
  auto in = open_in(path);
  return read_labels(in);
}

}  // namespace txlm::io
