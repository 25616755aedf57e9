#include "fedchem/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fedchem/strategies.hpp"

namespace fedchem {

namespace {

struct CaseFixture {
  std::vector<GraphFeatures> feats;
  Matrix labels;
  std::vector<std::uint8_t> mask;
  std::vector<std::size_t> indices;
};

GraphFeatures random_graph(Rng& rng, int node_feat_dim, int edge_feat_dim) {
  const std::size_t n = 2 + rng.below(7);  // 2..8 nodes
  GraphFeatures g;
  g.nodes = Matrix(n, static_cast<std::size_t>(node_feat_dim));
  for (double& v : g.nodes.data) v = rng.normal();

  // Random spanning tree plus a few extra bonds, both directions per bond.
  std::vector<std::pair<std::size_t, std::size_t>> bonds;
  for (std::size_t i = 1; i < n; ++i) bonds.emplace_back(rng.below(i), i);
  const std::size_t extras = rng.below(n);
  for (std::size_t e = 0; e < extras; ++e) {
    const std::size_t a = rng.below(n);
    const std::size_t b = rng.below(n);
    if (a != b) bonds.emplace_back(a, b);
  }
  g.edge_feats = Matrix(2 * bonds.size(), static_cast<std::size_t>(edge_feat_dim));
  for (double& v : g.edge_feats.data) v = rng.normal();
  g.edge_endpoints.reserve(2 * bonds.size());
  for (const auto& [a, b] : bonds) {
    g.edge_endpoints.emplace_back(a, b);
    g.edge_endpoints.emplace_back(b, a);
  }
  return g;
}

CaseFixture random_fixture(Rng& rng, const MpnnConfig& cfg, std::size_t samples) {
  CaseFixture fx;
  fx.feats.reserve(samples);
  for (std::size_t s = 0; s < samples; ++s) {
    fx.feats.push_back(random_graph(rng, cfg.node_feat_dim, cfg.edge_feat_dim));
  }
  const std::size_t tc = static_cast<std::size_t>(cfg.task_count);
  fx.labels = Matrix(samples, tc);
  fx.mask.assign(samples * tc, 0);
  for (std::size_t s = 0; s < samples; ++s) {
    for (std::size_t t = 0; t < tc; ++t) {
      fx.labels.at(s, t) = cfg.task_type == TaskType::Regression
                               ? rng.normal()
                               : static_cast<double>(rng.below(2));
      fx.mask[s * tc + t] = rng.uniform() < 0.75 ? 1 : 0;
    }
    // At least one observed task per sample.
    bool any = false;
    for (std::size_t t = 0; t < tc; ++t) any = any || fx.mask[s * tc + t] != 0;
    if (!any) fx.mask[s * tc + rng.below(tc)] = 1;
  }
  fx.indices.resize(samples);
  for (std::size_t s = 0; s < samples; ++s) fx.indices[s] = s;
  return fx;
}

StrategyConfig case_strategy(StrategyKind kind) {
  StrategyConfig sc;
  sc.kind = kind;
  sc.gamma = 1.5;
  sc.mu = 0.1;
  sc.lambda = 0.1;
  sc.vat_weight = 0.7;
  // A larger adversarial radius than the training default so the Delta branch
  // contributes measurably to the finite-difference signal.
  sc.epsilon = 0.05;
  sc.xi = 1.3;
  return sc;
}

GradCheckCase check_one(StrategyKind kind, TaskType task_type, int case_index,
                        std::uint64_t seed) {
  MpnnConfig cfg;
  cfg.mp_layers = 2;
  cfg.edge_hidden = 5;
  cfg.node_dim = 6;
  cfg.head_hidden = 6;
  cfg.readout = case_index % 2 == 0 ? Readout::Sum : Readout::Mean;
  cfg.task_count = 2;
  cfg.task_type = task_type;
  cfg.node_feat_dim = 7;
  cfg.edge_feat_dim = 3;

  Rng rng(mix_seed(seed, {static_cast<std::uint64_t>(kind), static_cast<std::uint64_t>(task_type),
                          static_cast<std::uint64_t>(case_index)}));
  const CaseFixture fx = random_fixture(rng, cfg, 3);
  ClientData data{fx.feats, &fx.labels, fx.mask, fx.indices, };

  ParamVector params = init_params(cfg, mix_seed(seed, {11, static_cast<std::uint64_t>(case_index)}));
  const ParamVector global =
      init_params(cfg, mix_seed(seed, {12, static_cast<std::uint64_t>(case_index)}));
  // Small perturbation so local != global (exercises prox and the omega max).
  for (double& v : params.values) v += 0.05 * rng.normal();

  const StrategyConfig sc = case_strategy(kind);
  const std::vector<std::size_t> batch = fx.indices;

  ReweightState state;
  if (kind == StrategyKind::Flit || kind == StrategyKind::FlitPlus) {
    state.has_global_cache = true;
    state.global_phi.resize(fx.indices.size());
    for (std::size_t pos = 0; pos < fx.indices.size(); ++pos) {
      const ForwardTrace trace = forward(global, cfg, fx.feats[pos]);
      state.global_phi[pos] =
          sample_loss(trace.pred, data.target_row(pos), data.mask_row(pos), cfg.task_type);
    }
    if (kind == StrategyKind::FlitPlus && sc.lambda != 0.0) {
      Rng vat_rng(mix_seed(seed, {13, static_cast<std::uint64_t>(case_index)}));
      state.global_delta.resize(fx.indices.size());
      for (std::size_t pos = 0; pos < fx.indices.size(); ++pos) {
        const MpnnVatModel model(global, cfg, fx.feats[pos]);
        state.global_delta[pos] =
            vat_discrepancy(model, fx.feats[pos].nodes, cfg.task_type, sc, vat_rng).delta;
      }
    }
  }

  Rng vat_rng(mix_seed(seed, {14, static_cast<std::uint64_t>(case_index)}));
  const ObjectiveAux aux = prepare_batch_aux(params, cfg, data, batch, sc, state, vat_rng);

  ParamVector grad = zeros_like_layout(params.layout);
  objective_gradient(params, global, cfg, data, batch, sc, aux, grad);

  GradCheckCase result;
  {
    std::ostringstream label;
    label << strategy_name(kind) << "/"
          << (task_type == TaskType::Regression ? "regression" : "classification") << "/case"
          << case_index;
    result.label = label.str();
  }

  ParamVector probe = params;
  for (std::size_t i = 0; i < params.values.size(); ++i) {
    const double saved = probe.values[i];
    probe.values[i] = saved + kGradCheckStep;
    const double up = objective_value(probe, global, cfg, data, batch, sc, aux);
    probe.values[i] = saved - kGradCheckStep;
    const double down = objective_value(probe, global, cfg, data, batch, sc, aux);
    probe.values[i] = saved;
    const double fd = (up - down) / (2.0 * kGradCheckStep);
    const double a = grad.values[i];
    const double abs_err = std::abs(a - fd);
    const double rel_err = abs_err / std::max({std::abs(a), std::abs(fd), 1e-12});
    result.max_abs_err = std::max(result.max_abs_err, abs_err);
    result.max_rel_err = std::max(result.max_rel_err, rel_err);
    ++result.checked;
    if (abs_err > kGradCheckAbsTol + kGradCheckRelTol * std::max(std::abs(a), std::abs(fd))) {
      ++result.failures;
    }
  }
  result.passed = result.failures == 0;
  return result;
}

}  // namespace

GradCheckReport run_gradient_checks(std::uint64_t seed, int cases_per_strategy) {
  static constexpr StrategyKind kKinds[] = {StrategyKind::Erm,  StrategyKind::Prox,
                                            StrategyKind::Focal, StrategyKind::Vat,
                                            StrategyKind::Flit,  StrategyKind::FlitPlus};
  GradCheckReport report;
  report.all_passed = true;
  for (StrategyKind kind : kKinds) {
    for (int c = 0; c < cases_per_strategy; ++c) {
      const TaskType task_type = c % 2 == 0 ? TaskType::Regression : TaskType::BinaryMultilabel;
      GradCheckCase item = check_one(kind, task_type, c, seed);
      report.total_checked += item.checked;
      report.total_failures += item.failures;
      if (item.max_abs_err > report.worst_abs_err) {
        report.worst_abs_err = item.max_abs_err;
        report.worst_label = item.label;
      }
      report.worst_rel_err = std::max(report.worst_rel_err, item.max_rel_err);
      report.all_passed = report.all_passed && item.passed;
      report.cases.push_back(std::move(item));
    }
  }
  return report;
}

std::string format_report(const GradCheckReport& report) {
  std::ostringstream out;
  for (const GradCheckCase& c : report.cases) {
    out << (c.passed ? "  ok   " : "  FAIL ") << c.label << "  components=" << c.checked
        << "  max_abs_err=" << c.max_abs_err << "  max_rel_err=" << c.max_rel_err << "\n";
  }
  out << (report.all_passed ? "PASS" : "FAIL") << ": " << report.total_checked
      << " gradient components, " << report.total_failures
      << " outside |a-f| <= " << kGradCheckAbsTol << " + " << kGradCheckRelTol
      << "*max(|a|,|f|) at h=" << kGradCheckStep << " (worst " << report.worst_abs_err << " in "
      << (report.worst_label.empty() ? "-" : report.worst_label) << ")\n";
  return out.str();
}

}  // namespace fedchem
