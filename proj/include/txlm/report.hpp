#pragma once

// Text artifacts: score CSVs, training and probe logs, normalized tables, and
// two small SVG charts (probe score against pretraining step, and per-method
// rank histograms). Every artifact starts with a provenance line carrying the
// config hash and master seed (a comment in CSV, Markdown and SVG alike).

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "txlm/common.hpp"
#include "txlm/pretrain.hpp"
#include "txlm/probe.hpp"
#include "txlm/tasks.hpp"

namespace txlm::report {

struct Provenance {
  std::string config_hash;
  std::uint64_t seed = 0;
};

inline std::string provenance_text(const Provenance& p) {
  return "config_hash=" + p.config_hash + " seed=" + std::to_string(p.seed);
}

// Shortest representation that parses back to the same double.
inline std::string fmt(double x) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

inline std::string fmt(float x) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw Error("bad number '" + std::string(s) + "'");
  return v;
}

inline std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == sep) {
      out.emplace_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

// Data lines of a CSV after the provenance comment and the header row.
inline std::vector<std::vector<std::string>> csv_rows(std::string_view text, std::string_view expected_header) {
  std::istringstream in{std::string(text)};
  std::vector<std::vector<std::string>> rows;
  bool header_seen = false;
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (line != expected_header) throw Error("unexpected CSV header '" + line + "'");
      header_seen = true;
      continue;
    }
    rows.push_back(split(line, ','));
  }
  if (!header_seen) throw Error("CSV has no header row");
  return rows;
}

// ---------------------------------------------------------------------------
// Scores.

inline constexpr std::string_view kScoresHeader = "method,task,metric,raw,normalized,rank";

inline std::string scores_csv(const probe::ScoreTable& table, const Provenance& p) {
  std::string out = "# " + provenance_text(p) + "\n" + std::string(kScoresHeader) + "\n";
  for (const auto& e : table.entries()) {
    out += e.method + "," + e.task + "," + e.metric + "," + fmt(e.raw) + "," + fmt(e.normalized) + "," +
           std::to_string(e.rank) + "\n";
  }
  return out;
}

inline probe::ScoreTable parse_scores_csv(std::string_view text) {
  probe::ScoreTable t;
  for (const auto& r : csv_rows(text, kScoresHeader)) {
    if (r.size() != 6) throw Error("score row needs 6 fields");
    t.add(r[0], r[1], r[2], parse_double(r[3]));
    auto& e = t.entries().back();
    e.normalized = parse_double(r[4]);
    e.rank = std::stoi(r[5]);
  }
  return t;
}

// ---------------------------------------------------------------------------
// Training and probe logs.

inline std::string training_log_csv(std::span<const train::StepRecord> records, const Provenance& p) {
  std::string out = "# " + provenance_text(p) + "\nstep,loss,lr\n";
  for (const auto& r : records) out += std::to_string(r.step) + "," + fmt(r.loss) + "," + fmt(r.lr) + "\n";
  return out;
}

struct ProbePoint {
  std::int64_t step = 0;
  std::string task;
  std::string metric;
  double score = 0.0;
};

inline void to_json(nlohmann::json& j, const ProbePoint& p) {
  j = nlohmann::json{{"step", p.step}, {"task", p.task}, {"metric", p.metric}, {"score", p.score}};
}
inline void from_json(const nlohmann::json& j, ProbePoint& p) {
  p.step = j.at("step").get<std::int64_t>();
  p.task = j.at("task").get<std::string>();
  p.metric = j.at("metric").get<std::string>();
  p.score = j.at("score").get<double>();
}

inline constexpr std::string_view kProbeLogHeader = "step,task,metric,score";

inline std::string probe_log_csv(std::span<const ProbePoint> points, const Provenance& p) {
  std::string out = "# " + provenance_text(p) + "\n" + std::string(kProbeLogHeader) + "\n";
  for (const auto& q : points) out += std::to_string(q.step) + "," + q.task + "," + q.metric + "," + fmt(q.score) + "\n";
  return out;
}

inline std::vector<ProbePoint> parse_probe_log(std::string_view text) {
  std::vector<ProbePoint> out;
  for (const auto& r : csv_rows(text, kProbeLogHeader)) {
    if (r.size() != 4) throw Error("probe log row needs 4 fields");
    out.push_back({std::stoll(r[0]), r[1], r[2], parse_double(r[3])});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalized tables, one per task group, headline metric per task.

inline std::vector<std::string> methods_of(const probe::ScoreTable& t) {
  std::vector<std::string> m;
  for (const auto& e : t.entries()) {
    if (std::find(m.begin(), m.end(), e.method) == m.end()) m.push_back(e.method);
  }
  return m;
}

inline std::string normalized_tables_markdown(const probe::ScoreTable& t, std::span<const std::string> method_order,
                                              const Provenance& p) {
  std::string out = "<!-- " + provenance_text(p) + " -->\n\n";
  out += "Normalized probe scores (min-max across methods per task and metric; 1 = best, 0 = worst).\n";
  for (TaskGroup g : {TaskGroup::kDemographics, TaskGroup::kRisk, TaskGroup::kBanking, TaskGroup::kGeolocation}) {
    std::string body;
    for (const auto& task : all_tasks()) {
      if (task.group != g) continue;
      const std::string metric(to_string(task.headline));
      std::string row = "| " + std::string(task.id) + " | " + metric + " |";
      bool any = false;
      for (const auto& m : method_order) {
        const auto e = t.find(m, task.id, metric);
        row += e ? " " + fmt(std::round(e->normalized * 1000.0) / 1000.0) + " |" : " - |";
        any = any || e.has_value();
      }
      if (any) body += row + "\n";
    }
    if (body.empty()) continue;
    out += "\n## " + std::string(to_string(g)) + "\n\n| task | metric |";
    for (const auto& m : method_order) out += " " + m + " |";
    out += "\n|---|---|";
    for (std::size_t i = 0; i < method_order.size(); ++i) out += "---|";
    out += "\n" + body;
  }
  return out;
}

// Long form of every (task, metric) pair: group,task,metric,<method...>.
inline std::string normalized_table_csv(const probe::ScoreTable& t, std::span<const std::string> method_order,
                                        const Provenance& p) {
  std::string out = "# " + provenance_text(p) + "\ngroup,task,metric";
  for (const auto& m : method_order) out += "," + m;
  out += "\n";
  std::string task, metric;
  for (const auto& e : t.entries()) {
    if (e.task == task && e.metric == metric) continue;
    task = e.task;
    metric = e.metric;
    out += std::string(to_string(task_spec(task).group)) + "," + task + "," + metric;
    for (const auto& m : method_order) {
      const auto f = t.find(m, task, metric);
      out += "," + (f ? fmt(f->normalized) : std::string());
    }
    out += "\n";
  }
  return out;
}

inline std::string rank_histogram_csv(const std::map<std::string, std::vector<int>>& hist, const Provenance& p) {
  std::string out = "# " + provenance_text(p) + "\nmethod,rank,count\n";
  for (const auto& [method, counts] : hist) {
    for (std::size_t r = 0; r < counts.size(); ++r) {
      out += method + "," + std::to_string(r + 1) + "," + std::to_string(counts[r]) + "\n";
    }
  }
  return out;
}

inline nlohmann::ordered_json summary_json(const probe::ScoreTable& t, std::span<const std::string> method_order,
                                           const Provenance& p) {
  nlohmann::ordered_json j;
  j["config_hash"] = p.config_hash;
  j["seed"] = p.seed;
  j["n_groups"] = t.n_groups();
  auto& methods = j["methods"] = nlohmann::ordered_json::object();
  const auto hist = t.rank_distribution();
  for (const auto& m : method_order) {
    double sum = 0.0;
    int n = 0;
    for (const auto& e : t.entries()) {
      if (e.method == m) {
        sum += e.normalized;
        ++n;
      }
    }
    auto& mj = methods[m];
    mj["mean_normalized"] = n > 0 ? sum / n : 0.0;
    mj["n_scores"] = n;
    auto it = hist.find(m);
    mj["rank_histogram"] = it == hist.end() ? std::vector<int>{} : it->second;
  }
  return j;
}

// ---------------------------------------------------------------------------
// SVG.

namespace detail {

inline constexpr std::array<std::string_view, 6> kPalette = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                                                             "#8c564b"};

inline std::string num(double x) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(2);
  s << x;
  return s.str();
}

inline std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Frame {
  double width = 640, height = 400, left = 60, right = 150, top = 40, bottom = 50;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;

  double px(double x) const { return left + (x - x0) / (x1 - x0) * (width - left - right); }
  double py(double y) const { return height - bottom - (y - y0) / (y1 - y0) * (height - top - bottom); }
};

inline std::string open_svg(const Frame& f, std::string_view title, const Provenance& p) {
  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(f.width) + "\" height=\"" +
                    num(f.height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out += "<!-- " + provenance_text(p) + " -->\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<text x=\"" + num(f.width / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" + escape(title) +
         "</text>\n";
  return out;
}

inline std::string axes(const Frame& f, std::string_view xlabel, std::string_view ylabel, int yticks = 5) {
  std::string out;
  out += "<line x1=\"" + num(f.left) + "\" y1=\"" + num(f.py(f.y0)) + "\" x2=\"" + num(f.width - f.right) + "\" y2=\"" +
         num(f.py(f.y0)) + "\" stroke=\"black\"/>\n";
  out += "<line x1=\"" + num(f.left) + "\" y1=\"" + num(f.py(f.y0)) + "\" x2=\"" + num(f.left) + "\" y2=\"" +
         num(f.py(f.y1)) + "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= yticks; ++i) {
    const double y = f.y0 + (f.y1 - f.y0) * i / yticks;
    out += "<text x=\"" + num(f.left - 6) + "\" y=\"" + num(f.py(y) + 4) + "\" text-anchor=\"end\">" + num(y) +
           "</text>\n";
  }
  out += "<text x=\"" + num((f.left + f.width - f.right) / 2) + "\" y=\"" + num(f.height - 12) +
         "\" text-anchor=\"middle\">" + escape(xlabel) + "</text>\n";
  out += "<text x=\"16\" y=\"" + num((f.top + f.height - f.bottom) / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
         num((f.top + f.height - f.bottom) / 2) + ")\">" + escape(ylabel) + "</text>\n";
  return out;
}

inline std::string legend(const Frame& f, std::span<const std::string> names) {
  std::string out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const double y = f.top + 10 + 18.0 * static_cast<double>(i);
    const auto color = kPalette[i % kPalette.size()];
    out += "<rect x=\"" + num(f.width - f.right + 15) + "\" y=\"" + num(y - 9) + "\" width=\"12\" height=\"12\" fill=\"" +
           std::string(color) + "\"/>\n";
    out += "<text x=\"" + num(f.width - f.right + 32) + "\" y=\"" + num(y + 1) + "\">" + escape(names[i]) + "</text>\n";
  }
  return out;
}

}  // namespace detail

// One polyline per series of (step, score) points.
inline std::string learning_curve_svg(const std::map<std::string, std::vector<std::pair<double, double>>>& series,
                                      std::string_view title, std::string_view ylabel, const Provenance& p) {
  detail::Frame f;
  double xmax = 1.0, ymin = 1e300, ymax = -1e300;
  for (const auto& [name, pts] : series) {
    for (const auto& [x, y] : pts) {
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  }
  if (ymin > ymax) {
    ymin = 0.0;
    ymax = 1.0;
  }
  const double pad = std::max(0.02, 0.05 * (ymax - ymin));
  f.x1 = xmax;
  f.y0 = std::floor((ymin - pad) * 20.0) / 20.0;
  f.y1 = std::ceil((ymax + pad) * 20.0) / 20.0;
  std::string out = detail::open_svg(f, title, p) + detail::axes(f, "pretraining step", ylabel);
  for (int i = 0; i <= 4; ++i) {
    const double x = f.x1 * i / 4.0;
    out += "<text x=\"" + detail::num(f.px(x)) + "\" y=\"" + detail::num(f.py(f.y0) + 16) +
           "\" text-anchor=\"middle\">" + std::to_string(std::llround(x)) + "</text>\n";
  }
  std::vector<std::string> names;
  std::size_t i = 0;
  for (const auto& [name, pts] : series) {
    names.push_back(name);
    const auto color = std::string(detail::kPalette[i++ % detail::kPalette.size()]);
    std::string path;
    for (const auto& [x, y] : pts) path += detail::num(f.px(x)) + "," + detail::num(f.py(y)) + " ";
    out += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"2\" points=\"" + path + "\"/>\n";
    for (const auto& [x, y] : pts) {
      out += "<circle cx=\"" + detail::num(f.px(x)) + "\" cy=\"" + detail::num(f.py(y)) + "\" r=\"3\" fill=\"" + color +
             "\"/>\n";
    }
  }
  out += detail::legend(f, names) + "</svg>\n";
  return out;
}

// Grouped bars: for each rank position, one bar per method.
inline std::string rank_histogram_svg(const std::map<std::string, std::vector<int>>& hist,
                                      std::span<const std::string> method_order, const Provenance& p) {
  detail::Frame f;
  std::size_t n_ranks = 0;
  int top = 1;
  for (const auto& [m, counts] : hist) {
    n_ranks = std::max(n_ranks, counts.size());
    for (int c : counts) top = std::max(top, c);
  }
  f.x0 = 0;
  f.x1 = static_cast<double>(std::max<std::size_t>(n_ranks, 1));
  f.y1 = static_cast<double>(top);
  std::string out = detail::open_svg(f, "Rank distribution across tasks and metrics", p) +
                    detail::axes(f, "rank (1 = best)", "count");
  const double nm = static_cast<double>(std::max<std::size_t>(method_order.size(), 1));
  const double slot = 0.8 / nm;
  for (std::size_t r = 0; r < n_ranks; ++r) {
    out += "<text x=\"" + detail::num(f.px(static_cast<double>(r) + 0.5)) + "\" y=\"" + detail::num(f.py(0) + 16) +
           "\" text-anchor=\"middle\">" + std::to_string(r + 1) + "</text>\n";
    for (std::size_t k = 0; k < method_order.size(); ++k) {
      auto it = hist.find(method_order[k]);
      const int c = it == hist.end() || r >= it->second.size() ? 0 : it->second[r];
      const double x = static_cast<double>(r) + 0.1 + slot * static_cast<double>(k);
      out += "<rect x=\"" + detail::num(f.px(x)) + "\" y=\"" + detail::num(f.py(c)) + "\" width=\"" +
             detail::num(f.px(x + slot) - f.px(x)) + "\" height=\"" + detail::num(f.py(0) - f.py(c)) + "\" fill=\"" +
             std::string(detail::kPalette[k % detail::kPalette.size()]) + "\"/>\n";
    }
  }
  out += detail::legend(f, method_order) + "</svg>\n";
  return out;
}

}  // namespace txlm::report
