#pragma once

// Classification metrics: accuracy, ROC AUC (rank statistic, ties averaged),
// PR AUC (step-interpolated average precision), macro F1, and one-vs-rest
// macro ROC AUC for multiclass scores. Spearman correlation for learning curves.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "txlm/common.hpp"

namespace txlm::metrics {

inline double accuracy(std::span<const int> predicted, std::span<const int> labels) {
  if (predicted.size() != labels.size() || labels.empty()) throw InvalidArgument("accuracy: size mismatch or empty");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predicted[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

// Probability that a random positive outscores a random negative, ties
// counted as one half (Mann-Whitney U with average ranks).
inline double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw InvalidArgument("roc_auc: size mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        rank_sum_pos += avg_rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw InvalidArgument("roc_auc needs both classes");
  const double np = static_cast<double>(n_pos);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

// Area under the precision-recall curve with step interpolation:
// sum over distinct thresholds (descending) of ΔRecall × Precision.
inline double pr_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw InvalidArgument("pr_auc: size mismatch");
  const std::size_t n = scores.size();
  const auto n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (n_pos == 0) throw InvalidArgument("pr_auc needs at least one positive");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double area = 0.0;
  double prev_recall = 0.0;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      if (labels[order[j]] == 1) ++tp;
      ++j;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(n_pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(j);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return area;
}

// Unweighted mean of per-class F1 over classes 0..n_classes-1. A class with no
// true and no predicted members scores 0.
inline double f1_macro(std::span<const int> predicted, std::span<const int> labels, int n_classes) {
  if (predicted.size() != labels.size() || labels.empty()) throw InvalidArgument("f1_macro: size mismatch or empty");
  if (n_classes < 2) throw InvalidArgument("f1_macro needs n_classes >= 2");
  const auto K = static_cast<std::size_t>(n_classes);
  std::vector<double> tp(K, 0.0), fp(K, 0.0), fn(K, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    const int p = predicted[i];
    if (y < 0 || y >= n_classes || p < 0 || p >= n_classes) throw InvalidArgument("f1_macro: class out of range");
    if (p == y) {
      tp[static_cast<std::size_t>(y)] += 1;
    } else {
      fp[static_cast<std::size_t>(p)] += 1;
      fn[static_cast<std::size_t>(y)] += 1;
    }
  }
  double total = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    const double denom = 2 * tp[k] + fp[k] + fn[k];
    total += denom > 0 ? 2 * tp[k] / denom : 0.0;
  }
  return total / static_cast<double>(K);
}

// One-vs-rest ROC AUC averaged over classes that have both positives and
// negatives among the rows. `probs` is rows × n_classes.
inline double roc_auc_ovr_macro(const Eigen::MatrixXd& probs, std::span<const int> labels) {
  if (static_cast<std::size_t>(probs.rows()) != labels.size()) throw InvalidArgument("roc_auc_ovr: size mismatch");
  double total = 0.0;
  int counted = 0;
  std::vector<double> col(labels.size());
  std::vector<int> bin(labels.size());
  for (Eigen::Index k = 0; k < probs.cols(); ++k) {
    std::size_t pos = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      col[i] = probs(static_cast<Eigen::Index>(i), k);
      bin[i] = labels[i] == static_cast<int>(k) ? 1 : 0;
      pos += static_cast<std::size_t>(bin[i]);
    }
    if (pos == 0 || pos == labels.size()) continue;
    total += roc_auc(col, bin);
    ++counted;
  }
  if (counted == 0) throw InvalidArgument("roc_auc_ovr: no class has both positives and negatives");
  return total / counted;
}

// Average ranks (1-based), ties sharing the mean of their positions.
inline std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && x[order[j]] == x[order[i]]) ++j;
    for (std::size_t k = i; k < j; ++k) r[order[k]] = 0.5 * static_cast<double>(i + 1 + j);
    i = j;
  }
  return r;
}

// Spearman rank correlation: Pearson correlation of average ranks.
inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("spearman needs two equal-length series, n >= 2");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace txlm::metrics
