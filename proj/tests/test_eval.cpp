#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "fedchem/eval.hpp"
#include "fedchem/rng.hpp"

using namespace fedchem;

namespace {

// Quadratic reference: probability a random positive outscores a random
// negative, ties counted half. Every increment is a multiple of 0.5, so the
// sum is exact in double and the fast rank-based version must match bitwise.
double auc_pair_oracle(const std::vector<double>& scores, const std::vector<double>& labels,
                       const std::vector<std::uint8_t>& mask) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!mask[i] || labels[i] <= 0.5) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (!mask[j] || labels[j] > 0.5) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) {
        wins += 1.0;
      } else if (scores[i] == scores[j]) {
        wins += 0.5;
      }
    }
  }
  return wins / pairs;
}

}  // namespace

TEST_CASE("rmse and mae hand fixtures with masks") {
  const std::vector<double> preds{1.0, 2.0, 3.0};
  const std::vector<double> targets{0.0, 2.0, 5.0};
  const std::vector<std::uint8_t> all{1, 1, 1};
  const std::vector<std::uint8_t> holey{1, 0, 1};

  CHECK(rmse(preds, targets, all) == doctest::Approx(std::sqrt(5.0 / 3.0)).epsilon(1e-15));
  CHECK(rmse(preds, targets, holey) == doctest::Approx(std::sqrt(2.5)).epsilon(1e-15));
  CHECK(mae(preds, targets, all) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(mae(preds, targets, holey) == doctest::Approx(1.5).epsilon(1e-15));

  CHECK(rmse(preds, preds, all) == 0.0);
  CHECK(mae(preds, preds, all) == 0.0);
}

TEST_CASE("empty masks and length mismatches are rejected") {
  const std::vector<double> v{1.0, 2.0};
  const std::vector<std::uint8_t> zeros{0, 0};
  const std::vector<std::uint8_t> short_mask{1};
  CHECK_THROWS_AS(rmse(v, v, zeros), EmptyMask);
  CHECK_THROWS_AS(mae(v, v, zeros), EmptyMask);
  CHECK_THROWS_AS(roc_auc(v, v, zeros), EmptyMask);
  CHECK_THROWS_AS(rmse(v, v, short_mask), ShapeMismatch);
}

TEST_CASE("roc_auc endpoint fixtures") {
  const std::vector<std::uint8_t> m{1, 1, 1, 1};
  const std::vector<double> labels{0.0, 0.0, 1.0, 1.0};
  CHECK(roc_auc({{0.1, 0.2, 0.8, 0.9}}, labels, m) == 1.0);          // perfect
  CHECK(roc_auc({{0.9, 0.8, 0.2, 0.1}}, labels, m) == 0.0);          // inverted
  CHECK(roc_auc({{0.5, 0.5, 0.5, 0.5}}, labels, m) == 0.5);          // all tied
  CHECK(roc_auc({{0.1, 0.6, 0.6, 0.9}}, labels, m) == 0.875);        // one cross-class tie
}

TEST_CASE("roc_auc rejects single-class tasks") {
  const std::vector<double> scores{0.2, 0.4, 0.6};
  const std::vector<std::uint8_t> m{1, 1, 1};
  CHECK_THROWS_AS(roc_auc(scores, {{1.0, 1.0, 1.0}}, m), DegenerateTask);
  CHECK_THROWS_AS(roc_auc(scores, {{0.0, 0.0, 0.0}}, m), DegenerateTask);
  // Masking can make a mixed column single-class.
  CHECK_THROWS_AS(roc_auc(scores, {{1.0, 1.0, 0.0}}, {{1, 1, 0}}), DegenerateTask);
}

TEST_CASE("roc_auc agrees exactly with quadratic pair counting") {
  Rng rng(777);
  int cases = 0;
  while (cases < 200) {
    const std::size_t n = 2 + rng.below(60);
    std::vector<double> scores(n), labels(n);
    std::vector<std::uint8_t> mask(n);
    // Half the cases draw scores from a coarse grid to force heavy ties.
    const bool gridded = (cases % 2) == 0;
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = gridded ? 0.25 * static_cast<double>(rng.below(5)) : rng.uniform();
      labels[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
      mask[i] = rng.uniform() < 0.85 ? 1 : 0;
    }
    std::size_t pos = 0, neg = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!mask[i]) continue;
      (labels[i] > 0.5 ? pos : neg) += 1;
    }
    if (pos == 0 || neg == 0) continue;  // degenerate draw; try another
    ++cases;
    const double fast = roc_auc(scores, labels, mask);
    const double slow = auc_pair_oracle(scores, labels, mask);
    CHECK(fast == slow);  // bitwise: both are (wins + ties/2) / (n+ * n-)
  }
  CHECK(cases == 200);
}

TEST_CASE("metric direction and names") {
  CHECK(metric_improves(MetricKind::Rmse, 0.4, 0.5));
  CHECK_FALSE(metric_improves(MetricKind::Rmse, 0.5, 0.4));
  CHECK(metric_improves(MetricKind::Mae, 0.1, 0.2));
  CHECK(metric_improves(MetricKind::RocAuc, 0.9, 0.8));
  CHECK_FALSE(metric_improves(MetricKind::RocAuc, 0.8, 0.9));
  CHECK_FALSE(metric_improves(MetricKind::Rmse, 0.4, 0.4));  // ties are not improvements

  CHECK(metric_name(MetricKind::Rmse) == "rmse");
  CHECK(metric_name(MetricKind::Mae) == "mae");
  CHECK(metric_name(MetricKind::RocAuc) == "roc_auc");
}

TEST_CASE("evaluate aggregates per task and skips degenerate columns") {
  Matrix preds(3, 2), targets(3, 2), mask(3, 2);
  // Task 0: plain rmse fixture. Task 1: fully masked -> skipped.
  const double p0[3] = {1.0, 2.0, 3.0};
  const double y0[3] = {0.0, 2.0, 5.0};
  for (std::size_t r = 0; r < 3; ++r) {
    preds.at(r, 0) = p0[r];
    targets.at(r, 0) = y0[r];
    mask.at(r, 0) = 1.0;
    preds.at(r, 1) = 0.5;
    targets.at(r, 1) = 1.0;
    mask.at(r, 1) = 0.0;
  }
  const MetricReport rep = evaluate(preds, targets, mask, MetricKind::Rmse);
  CHECK(rep.per_task[0] == doctest::Approx(std::sqrt(5.0 / 3.0)).epsilon(1e-15));
  CHECK(std::isnan(rep.per_task[1]));
  CHECK(rep.task_skipped == std::vector<bool>{false, true});
  CHECK(rep.skipped_count == 1);
  CHECK(rep.aggregate == rep.per_task[0]);
}

TEST_CASE("evaluate skips single-class auc columns and averages the rest") {
  Matrix preds(4, 2), targets(4, 2), mask(4, 2);
  const double s0[4] = {0.1, 0.2, 0.8, 0.9};
  const double y0[4] = {0.0, 0.0, 1.0, 1.0};
  for (std::size_t r = 0; r < 4; ++r) {
    preds.at(r, 0) = s0[r];
    targets.at(r, 0) = y0[r];
    mask.at(r, 0) = 1.0;
    preds.at(r, 1) = 0.3;
    targets.at(r, 1) = 1.0;  // all-positive column
    mask.at(r, 1) = 1.0;
  }
  const MetricReport rep = evaluate(preds, targets, mask, MetricKind::RocAuc);
  CHECK(rep.per_task[0] == 1.0);
  CHECK(rep.task_skipped[1]);
  CHECK(rep.aggregate == 1.0);

  // Two good AUC columns average.
  for (std::size_t r = 0; r < 4; ++r) {
    preds.at(r, 1) = s0[3 - r];
    targets.at(r, 1) = y0[r];
  }
  const MetricReport both = evaluate(preds, targets, mask, MetricKind::RocAuc);
  CHECK(both.per_task[1] == 0.0);
  CHECK(both.aggregate == 0.5);
  CHECK(both.skipped_count == 0);
}

TEST_CASE("evaluate throws when every task is skipped or shapes differ") {
  Matrix preds(2, 1), targets(2, 1), mask(2, 1);
  mask.fill(0.0);
  CHECK_THROWS_AS(evaluate(preds, targets, mask, MetricKind::Rmse), EmptyMask);

  Matrix wide(2, 2);
  CHECK_THROWS_AS(evaluate(preds, targets, wide, MetricKind::Rmse), ShapeMismatch);
}
