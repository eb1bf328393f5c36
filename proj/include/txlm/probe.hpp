#pragma once

// Linear probing: standard scaling, L2 logistic regression fit by full-batch
// gradient descent, evaluation, risk-task undersampling, and the cross-method
// score table (min-max normalization, ranks, rank histograms).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "txlm/common.hpp"
#include "txlm/metrics.hpp"
#include "txlm/parallel.hpp"
#include "txlm/tasks.hpp"

namespace txlm::probe {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Splits and sampling.

// 80/20 train/eval split by account-id hash; the same for every method and run.
inline bool is_eval_account(std::string_view account_id, double eval_fraction = 0.2) {
  const std::uint64_t h = derive_seed(fnv1a64(account_id), "probe-split");
  return static_cast<double>(h % 1000000) < eval_fraction * 1e6;
}

// Keeps every positive (label 1) row and min(ratio × positives, negatives)
// negatives drawn without replacement. Returns row indices in ascending order.
inline std::vector<std::size_t> undersample(std::span<const std::size_t> rows, std::span<const int> labels, int ratio,
                                            std::uint64_t seed) {
  if (ratio < 1) throw InvalidArgument("undersample ratio must be >= 1");
  std::vector<std::size_t> pos, neg;
  for (std::size_t r : rows) (labels[r] == 1 ? pos : neg).push_back(r);
  if (pos.empty()) throw InvalidArgument("undersample needs at least one positive");
  Rng rng(derive_seed(seed, "undersample"));
  shuffle(neg, rng);
  neg.resize(std::min(neg.size(), pos.size() * static_cast<std::size_t>(ratio)));
  std::vector<std::size_t> out = pos;
  out.insert(out.end(), neg.begin(), neg.end());
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Standard scaling.

struct Scaler {
  Vector mean;
  Vector stddev;  // population std; 0 for constant dimensions

  Matrix apply(const Matrix& x) const {
    Matrix out(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      if (stddev(j) > 0.0) {
        out.col(j) = (x.col(j).array() - mean(j)) / stddev(j);
      } else {
        out.col(j).setZero();
      }
    }
    return out;
  }
};

inline Scaler fit_scaler(const Matrix& train) {
  if (train.rows() < 2) throw InvalidArgument("standard_scale needs at least 2 training rows");
  Scaler s;
  s.mean = train.colwise().mean().transpose();
  s.stddev = ((train.rowwise() - s.mean.transpose()).array().square().colwise().mean()).sqrt().transpose();
  // Treat round-off-level spread as constant.
  for (Eigen::Index j = 0; j < s.stddev.size(); ++j) {
    if (s.stddev(j) <= 1e-12 * std::max(1.0, std::abs(s.mean(j)))) s.stddev(j) = 0.0;
  }
  return s;
}

inline std::pair<Matrix, Matrix> standard_scale(const Matrix& train, const Matrix& eval) {
  const Scaler s = fit_scaler(train);
  return {s.apply(train), s.apply(eval)};
}

// ---------------------------------------------------------------------------
// Logistic regression.

struct LogRegConfig {
  double l2 = 1e-4;
  int max_iter = 500;
  double tol = 1e-6;  // on the gradient norm
};

// Binary: one column, p(y=1) = σ(x·w + b). Multiclass: K columns, softmax.
struct LinearModel {
  TaskKind kind = TaskKind::kBinary;
  Matrix weights;  // d × (1 or K)
  Vector bias;     // 1 or K
  int iterations = 0;
  double grad_norm = 0.0;

  int n_classes() const { return kind == TaskKind::kBinary ? 2 : static_cast<int>(weights.cols()); }
};

namespace detail {

inline Matrix softmax_rows(const Matrix& z) {
  Matrix p(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double mx = z.row(i).maxCoeff();
    p.row(i) = (z.row(i).array() - mx).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

inline double log1p_exp(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

struct Objective {
  const Matrix& x;
  const std::vector<int>& y;
  TaskKind kind;
  double l2;

  // Mean negative log-likelihood + (l2/2)·|W|²; gradient written when asked.
  double operator()(const Matrix& w, const Vector& b, Matrix* gw, Vector* gb) const {
    const auto n = static_cast<double>(x.rows());
    Matrix z = x * w;
    z.rowwise() += b.transpose();
    double loss = 0.0;
    Matrix dz(z.rows(), z.cols());
    if (kind == TaskKind::kBinary) {
      for (Eigen::Index i = 0; i < z.rows(); ++i) {
        const double zi = z(i, 0);
        const int yi = y[static_cast<std::size_t>(i)];
        loss += log1p_exp(zi) - (yi == 1 ? zi : 0.0);
        dz(i, 0) = 1.0 / (1.0 + std::exp(-zi)) - yi;
      }
    } else {
      for (Eigen::Index i = 0; i < z.rows(); ++i) {
        const double mx = z.row(i).maxCoeff();
        const double lse = mx + std::log((z.row(i).array() - mx).exp().sum());
        const int yi = y[static_cast<std::size_t>(i)];
        loss += lse - z(i, yi);
        dz.row(i) = (z.row(i).array() - lse).exp();
        dz(i, yi) -= 1.0;
      }
    }
    loss = loss / n + 0.5 * l2 * w.squaredNorm();
    if (gw) *gw = x.transpose() * dz / n + l2 * w;
    if (gb) *gb = dz.colwise().sum().transpose() / n;
    return loss;
  }
};

}  // namespace detail

// Full-batch gradient descent with Armijo backtracking from zero initial
// weights. Deterministic; the intercept is not regularized.
inline LinearModel fit_logreg(const Matrix& x, std::span<const int> labels, TaskKind kind, int n_classes,
                              const LogRegConfig& cfg = {}) {
  if (static_cast<std::size_t>(x.rows()) != labels.size() || labels.empty()) {
    throw InvalidArgument("fit_logreg: label count does not match rows");
  }
  std::vector<int> y(labels.begin(), labels.end());
  {
    std::vector<int> distinct = y;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() < 2) throw InvalidArgument("fit_logreg needs at least two classes in the training labels");
    if (kind == TaskKind::kBinary && (distinct.front() != 0 || distinct.back() != 1)) {
      throw InvalidArgument("binary labels must be 0/1");
    }
    if (distinct.front() < 0 || distinct.back() >= n_classes) throw InvalidArgument("label outside [0, n_classes)");
  }
  const Eigen::Index K = kind == TaskKind::kBinary ? 1 : n_classes;
  LinearModel m;
  m.kind = kind;
  m.weights = Matrix::Zero(x.cols(), K);
  m.bias = Vector::Zero(K);
  const detail::Objective f{x, y, kind, cfg.l2};

  Matrix gw;
  Vector gb;
  double loss = f(m.weights, m.bias, &gw, &gb);
  double step = 1.0;
  for (m.iterations = 0; m.iterations < cfg.max_iter; ++m.iterations) {
    const double g2 = gw.squaredNorm() + gb.squaredNorm();
    m.grad_norm = std::sqrt(g2);
    if (m.grad_norm < cfg.tol) break;
    step = std::min(step * 2.0, 1e6);
    Matrix w_new;
    Vector b_new;
    double loss_new = 0.0;
    for (int tries = 0;; ++tries) {
      w_new = m.weights - step * gw;
      b_new = m.bias - step * gb;
      loss_new = f(w_new, b_new, nullptr, nullptr);
      if (loss_new <= loss - 0.5 * step * g2 || tries >= 60) break;
      step *= 0.5;
    }
    if (!(loss_new < loss)) break;  // no further decrease at machine precision
    m.weights = std::move(w_new);
    m.bias = std::move(b_new);
    loss = f(m.weights, m.bias, &gw, &gb);
  }
  m.grad_norm = std::sqrt(gw.squaredNorm() + gb.squaredNorm());
  return m;
}

// Class probabilities: rows × n_classes (binary gives two columns).
inline Matrix predict_proba(const LinearModel& m, const Matrix& x) {
  Matrix z = x * m.weights;
  z.rowwise() += m.bias.transpose();
  if (m.kind == TaskKind::kBinary) {
    Matrix p(x.rows(), 2);
    p.col(1) = (1.0 / (1.0 + (-z.col(0).array()).exp())).matrix();
    p.col(0) = (1.0 - p.col(1).array()).matrix();
    return p;
  }
  return detail::softmax_rows(z);
}

inline std::vector<int> predict(const Matrix& probs) {
  std::vector<int> out(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index best = 0;
    probs.row(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

inline std::vector<std::pair<Metric, double>> evaluate(const LinearModel& m, const Matrix& x,
                                                       std::span<const int> labels,
                                                       std::span<const Metric> wanted) {
  const Matrix probs = predict_proba(m, x);
  const std::vector<int> pred = predict(probs);
  std::vector<std::pair<Metric, double>> out;
  for (Metric metric : wanted) {
    double v = 0.0;
    switch (metric) {
      case Metric::kAccuracy: v = metrics::accuracy(pred, labels); break;
      case Metric::kF1Macro: v = metrics::f1_macro(pred, labels, m.n_classes()); break;
      case Metric::kRocAuc:
      case Metric::kPrAuc:
        if (m.kind == TaskKind::kBinary) {
          std::vector<double> s(probs.col(1).data(), probs.col(1).data() + probs.rows());
          v = metric == Metric::kRocAuc ? metrics::roc_auc(s, labels) : metrics::pr_auc(s, labels);
        } else if (metric == Metric::kRocAuc) {
          v = metrics::roc_auc_ovr_macro(probs, labels);
        } else {
          throw InvalidArgument("pr_auc is defined for binary tasks only");
        }
        break;
    }
    out.emplace_back(metric, v);
  }
  return out;
}

// ---------------------------------------------------------------------------
// One (method, task) probe.

struct ProbeConfig {
  LogRegConfig logreg;
  double eval_fraction = 0.2;
  std::uint64_t seed = 0;  // undersampling stream
};

struct ProbeResult {
  std::vector<std::pair<Metric, double>> scores;
  LinearModel model;
};

// `features` holds one row per account; `account_ids` fixes the split.
inline ProbeResult run_probe(const Matrix& features, std::span<const std::string> account_ids,
                             std::span<const int> labels, const TaskSpec& task, const ProbeConfig& cfg,
                             std::span<const Metric> metrics_override = {}) {
  if (static_cast<std::size_t>(features.rows()) != labels.size() || labels.size() != account_ids.size()) {
    throw InvalidArgument("run_probe: features, ids and labels must align");
  }
  std::vector<std::size_t> train_rows, eval_rows;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    (is_eval_account(account_ids[i], cfg.eval_fraction) ? eval_rows : train_rows).push_back(i);
  }
  if (task.undersample_ratio) {
    train_rows = undersample(train_rows, labels, *task.undersample_ratio, derive_seed(cfg.seed, std::string(task.id)));
  }
  auto gather = [&](const std::vector<std::size_t>& rows, Matrix& x, std::vector<int>& y) {
    x.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
    y.resize(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      x.row(static_cast<Eigen::Index>(r)) = features.row(static_cast<Eigen::Index>(rows[r]));
      y[r] = labels[rows[r]];
    }
  };
  Matrix x_train, x_eval;
  std::vector<int> y_train, y_eval;
  gather(train_rows, x_train, y_train);
  gather(eval_rows, x_eval, y_eval);
  const Scaler scaler = fit_scaler(x_train);
  // Class count comes from the task and the training labels only.
  const int n_classes = std::max(task.n_classes, *std::max_element(y_train.begin(), y_train.end()) + 1);
  ProbeResult r;
  r.model = fit_logreg(scaler.apply(x_train), y_train, task.kind, n_classes, cfg.logreg);
  const std::span<const Metric> wanted = metrics_override.empty() ? std::span<const Metric>(task.metrics)
                                                                  : metrics_override;
  r.scores = evaluate(r.model, scaler.apply(x_eval), y_eval, wanted);
  return r;
}

// ---------------------------------------------------------------------------
// Score table.

struct ScoreEntry {
  std::string method;
  std::string task;
  std::string metric;
  double raw = 0.0;
  double normalized = 0.0;
  int rank = 0;
};

class ScoreTable {
 public:
  void add(std::string method, std::string task, std::string metric, double raw) {
    entries_.push_back({std::move(method), std::move(task), std::move(metric), raw, 0.0, 0});
  }

  // Sorts entries (task order, metric, method) so emission does not depend on
  // the order results arrived in, then fills normalized scores and ranks.
  void finalize(std::span<const std::string> task_order = {}) {
    auto task_index = [&](const std::string& t) {
      auto it = std::find(task_order.begin(), task_order.end(), t);
      return it == task_order.end() ? task_order.size() : static_cast<std::size_t>(it - task_order.begin());
    };
    std::sort(entries_.begin(), entries_.end(), [&](const ScoreEntry& a, const ScoreEntry& b) {
      return std::make_tuple(task_index(a.task), a.task, a.metric, a.method) <
             std::make_tuple(task_index(b.task), b.task, b.metric, b.method);
    });
    normalize();
    assign_ranks();
  }

  // Min-max across methods per (task, metric); all-equal groups map to 1.0.
  void normalize() {
    for_each_group([](std::span<ScoreEntry> g) {
      double lo = g[0].raw, hi = g[0].raw;
      for (const auto& e : g) {
        lo = std::min(lo, e.raw);
        hi = std::max(hi, e.raw);
      }
      for (auto& e : g) e.normalized = hi > lo ? (e.raw - lo) / (hi - lo) : 1.0;
    });
  }

  // Competition ranking by raw score, descending; ties share the better rank.
  void assign_ranks() {
    for_each_group([](std::span<ScoreEntry> g) {
      for (auto& e : g) {
        int better = 0;
        for (const auto& o : g) better += o.raw > e.raw ? 1 : 0;
        e.rank = better + 1;
      }
    });
  }

  // method -> counts of rank 1..n_methods.
  std::map<std::string, std::vector<int>> rank_distribution() const {
    std::size_t n_methods = 0;
    for_each_group_const([&](std::span<const ScoreEntry> g) { n_methods = std::max(n_methods, g.size()); });
    std::map<std::string, std::vector<int>> hist;
    for (const auto& e : entries_) {
      auto& h = hist[e.method];
      h.resize(n_methods, 0);
      ++h[static_cast<std::size_t>(e.rank - 1)];
    }
    return hist;
  }

  std::size_t n_groups() const {
    std::size_t n = 0;
    for_each_group_const([&](std::span<const ScoreEntry>) { ++n; });
    return n;
  }

  const std::vector<ScoreEntry>& entries() const { return entries_; }
  std::vector<ScoreEntry>& entries() { return entries_; }

  std::optional<ScoreEntry> find(std::string_view method, std::string_view task, std::string_view metric) const {
    for (const auto& e : entries_) {
      if (e.method == method && e.task == task && e.metric == metric) return e;
    }
    return std::nullopt;
  }

 private:
  // Visits runs of entries sharing (task, metric); requires grouping order,
  // which finalize() establishes.
  template <typename Fn>
  void for_each_group(Fn&& fn) {
    group_bounds([&](std::size_t b, std::size_t e) { fn(std::span<ScoreEntry>(entries_.data() + b, e - b)); });
  }
  template <typename Fn>
  void for_each_group_const(Fn&& fn) const {
    group_bounds([&](std::size_t b, std::size_t e) { fn(std::span<const ScoreEntry>(entries_.data() + b, e - b)); });
  }
  template <typename Fn>
  void group_bounds(Fn&& fn) const {
    for (std::size_t i = 0; i < entries_.size();) {
      std::size_t j = i;
      while (j < entries_.size() && entries_[j].task == entries_[i].task && entries_[j].metric == entries_[i].metric) ++j;
      fn(i, j);
      i = j;
    }
  }

  std::vector<ScoreEntry> entries_;
};

}  // namespace txlm::probe
