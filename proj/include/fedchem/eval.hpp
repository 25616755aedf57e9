#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedchem/tensor.hpp"

namespace fedchem {

struct EmptyMask : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised by roc_auc when the unmasked labels are single-class; report-level
// evaluation treats this as "task skipped", not failure.
struct DegenerateTask : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class MetricKind { Rmse, Mae, RocAuc };

std::string metric_name(MetricKind kind);
// True when `a` is a better score than `b` for this metric.
bool metric_improves(MetricKind kind, double a, double b);

double rmse(std::span<const double> preds, std::span<const double> targets,
            std::span<const std::uint8_t> mask);
double mae(std::span<const double> preds, std::span<const double> targets,
           std::span<const std::uint8_t> mask);

/**
 * Area under the ROC curve via the rank statistic: average ranks over the
 * unmasked scores (ties share the mean rank), AUC = (R+ - n+(n+ + 1)/2) /
 * (n+ n-). Equals the probability a random positive outscores a random
 * negative, counting ties as half.
 */
double roc_auc(std::span<const double> scores, std::span<const double> labels,
               std::span<const std::uint8_t> mask);

struct MetricReport {
  MetricKind kind = MetricKind::Rmse;
  std::vector<double> per_task;       // NaN for skipped tasks
  std::vector<bool> task_skipped;
  double aggregate = 0.0;             // mean over non-skipped tasks
  std::size_t skipped_count = 0;
};

/**
 * Columnwise metric over an N x T prediction matrix with a parallel 0/1 mask.
 * Degenerate AUC tasks (or fully masked columns) are skipped and counted.
 * Throws EmptyMask when every task is skipped.
 */
MetricReport evaluate(const Matrix& preds, const Matrix& targets, const Matrix& mask,
                      MetricKind kind);

}  // namespace fedchem
