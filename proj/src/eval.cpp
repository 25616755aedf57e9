#include "fedchem/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace fedchem {

std::string metric_name(MetricKind kind) {
  switch (kind) {
    case MetricKind::Rmse: return "rmse";
    case MetricKind::Mae: return "mae";
    case MetricKind::RocAuc: return "roc_auc";
  }
  return "unknown";
}

bool metric_improves(MetricKind kind, double a, double b) {
  return kind == MetricKind::RocAuc ? a > b : a < b;
}

namespace {

void check_widths(std::size_t a, std::size_t b, std::size_t c) {
  if (a != b || b != c) throw ShapeMismatch("metric inputs differ in length");
}

}  // namespace

double rmse(std::span<const double> preds, std::span<const double> targets,
            std::span<const std::uint8_t> mask) {
  check_widths(preds.size(), targets.size(), mask.size());
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!mask[i]) continue;
    const double d = preds[i] - targets[i];
    total += d * d;
    ++n;
  }
  if (n == 0) throw EmptyMask("rmse over an empty mask");
  return std::sqrt(total / static_cast<double>(n));
}

double mae(std::span<const double> preds, std::span<const double> targets,
           std::span<const std::uint8_t> mask) {
  check_widths(preds.size(), targets.size(), mask.size());
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!mask[i]) continue;
    total += std::abs(preds[i] - targets[i]);
    ++n;
  }
  if (n == 0) throw EmptyMask("mae over an empty mask");
  return total / static_cast<double>(n);
}

double roc_auc(std::span<const double> scores, std::span<const double> labels,
               std::span<const std::uint8_t> mask) {
  check_widths(scores.size(), labels.size(), mask.size());
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (mask[i]) keep.push_back(i);
  }
  if (keep.empty()) throw EmptyMask("roc_auc over an empty mask");

  std::size_t n_pos = 0, n_neg = 0;
  for (std::size_t i : keep) {
    if (labels[i] > 0.5) {
      ++n_pos;
    } else {
      ++n_neg;
    }
  }
  if (n_pos == 0 || n_neg == 0) {
    throw DegenerateTask("roc_auc needs at least one positive and one negative");
  }

  std::sort(keep.begin(), keep.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Average ranks within tie runs; ranks are 1-based.
  double rank_pos_sum = 0.0;
  std::size_t i = 0;
  while (i < keep.size()) {
    std::size_t j = i;
    while (j + 1 < keep.size() && scores[keep[j + 1]] == scores[keep[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[keep[k]] > 0.5) rank_pos_sum += avg_rank;
    }
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos);
  const double nn = static_cast<double>(n_neg);
  return (rank_pos_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

MetricReport evaluate(const Matrix& preds, const Matrix& targets, const Matrix& mask,
                      MetricKind kind) {
  if (!preds.same_shape(targets) || !preds.same_shape(mask)) {
    throw ShapeMismatch("evaluate: prediction/target/mask shapes differ");
  }
  MetricReport report;
  report.kind = kind;
  const std::size_t T = preds.cols;
  report.per_task.assign(T, std::numeric_limits<double>::quiet_NaN());
  report.task_skipped.assign(T, false);

  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> p(preds.rows), y(preds.rows);
    std::vector<std::uint8_t> m(preds.rows);
    for (std::size_t r = 0; r < preds.rows; ++r) {
      p[r] = preds.at(r, t);
      y[r] = targets.at(r, t);
      m[r] = mask.at(r, t) != 0.0 ? 1 : 0;
    }
    try {
      double value = 0.0;
      switch (kind) {
        case MetricKind::Rmse: value = rmse(p, y, m); break;
        case MetricKind::Mae: value = mae(p, y, m); break;
        case MetricKind::RocAuc: value = roc_auc(p, y, m); break;
      }
      report.per_task[t] = value;
      total += value;
      ++used;
    } catch (const DegenerateTask&) {
      report.task_skipped[t] = true;
      ++report.skipped_count;
    } catch (const EmptyMask&) {
      report.task_skipped[t] = true;
      ++report.skipped_count;
    }
  }
  if (used == 0) throw EmptyMask("evaluate: every task was skipped");
  report.aggregate = total / static_cast<double>(used);
  return report;
}

}  // namespace fedchem
