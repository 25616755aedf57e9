#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fedchem {

// Central-difference step and acceptance tolerance for analytic-vs-numeric
// gradient comparison: a component passes iff
//   |analytic - numeric| <= kGradCheckAbsTol + kGradCheckRelTol * max(|analytic|, |numeric|).
inline constexpr double kGradCheckStep = 1e-5;
inline constexpr double kGradCheckAbsTol = 1e-7;
inline constexpr double kGradCheckRelTol = 1e-4;

struct GradCheckCase {
  std::string label;          // strategy / task-type / case index
  std::size_t checked = 0;    // parameter components compared
  std::size_t failures = 0;   // components outside tolerance
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;   // |a - f| / max(|a|, |f|, 1e-12)
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GradCheckCase> cases;
  std::size_t total_checked = 0;
  std::size_t total_failures = 0;
  double worst_abs_err = 0.0;
  double worst_rel_err = 0.0;
  std::string worst_label;
  bool all_passed = false;
};

/**
 * Compares analytic parameter gradients of every client objective against
 * central finite differences of the matching frozen-auxiliary objective
 * value, on randomly generated small graphs (at most 8 nodes) under a reduced
 * model configuration, alternating regression and multilabel-classification
 * task types. cases_per_strategy splits evenly across the two task types.
 */
GradCheckReport run_gradient_checks(std::uint64_t seed, int cases_per_strategy);

// Human-readable multi-line summary (one line per case plus a verdict line).
std::string format_report(const GradCheckReport& report);

}  // namespace fedchem
