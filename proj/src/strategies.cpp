#include "fedchem/strategies.hpp"

#include <algorithm>
#include <cmath>

namespace fedchem {

namespace {

constexpr double kProbClamp = 1e-7;
constexpr double kVatNormFloor = 1e-12;

double clamped_sigmoid(double z) {
  const double p = 1.0 / (1.0 + std::exp(-z));
  return std::min(1.0 - kProbClamp, std::max(kProbClamp, p));
}

double frobenius(const Matrix& m) {
  double acc = 0.0;
  for (double v : m.data) acc += v * v;
  return std::sqrt(acc);
}

// d(D)/d(perturbed raw output).
void divergence_grad_perturbed(std::span<const double> clean, std::span<const double> perturbed,
                               TaskType task_type, double scale, std::vector<double>& out) {
  const std::size_t tc = clean.size();
  out.assign(tc, 0.0);
  if (task_type == TaskType::Regression) {
    for (std::size_t t = 0; t < tc; ++t) out[t] = scale * 2.0 * (perturbed[t] - clean[t]);
  } else {
    const double inv = 1.0 / static_cast<double>(tc);
    for (std::size_t t = 0; t < tc; ++t) {
      const double p = clamped_sigmoid(clean[t]);
      const double q = clamped_sigmoid(perturbed[t]);
      out[t] = scale * inv * (q - p);
    }
  }
}

// d(D)/d(clean raw output); the clean branch also carries gradient.
void divergence_grad_clean(std::span<const double> clean, std::span<const double> perturbed,
                           TaskType task_type, double scale, std::vector<double>& out) {
  const std::size_t tc = clean.size();
  out.assign(tc, 0.0);
  if (task_type == TaskType::Regression) {
    for (std::size_t t = 0; t < tc; ++t) out[t] = scale * 2.0 * (clean[t] - perturbed[t]);
  } else {
    const double inv = 1.0 / static_cast<double>(tc);
    for (std::size_t t = 0; t < tc; ++t) {
      const double p = clamped_sigmoid(clean[t]);
      const double q = clamped_sigmoid(perturbed[t]);
      // dKL/dp through the sigmoid of the clean logit.
      out[t] = scale * inv * p * (1.0 - p) * std::log(p * (1.0 - q) / (q * (1.0 - p)));
    }
  }
}

GraphFeatures perturbed_features(const GraphFeatures& feats, const Matrix& r_adv, double xi) {
  GraphFeatures out = feats;
  for (std::size_t i = 0; i < out.nodes.data.size(); ++i) {
    out.nodes.data[i] += xi * r_adv.data[i];
  }
  return out;
}

}  // namespace

std::string strategy_name(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::Erm: return "erm";
    case StrategyKind::Prox: return "prox";
    case StrategyKind::Focal: return "focal";
    case StrategyKind::Vat: return "vat";
    case StrategyKind::Flit: return "flit";
    case StrategyKind::FlitPlus: return "flit_plus";
  }
  return "unknown";
}

StrategyKind parse_strategy(const std::string& name) {
  if (name == "erm" || name == "fedavg") return StrategyKind::Erm;
  if (name == "prox") return StrategyKind::Prox;
  if (name == "focal") return StrategyKind::Focal;
  if (name == "vat") return StrategyKind::Vat;
  if (name == "flit") return StrategyKind::Flit;
  if (name == "flit_plus") return StrategyKind::FlitPlus;
  throw std::invalid_argument("unknown strategy '" + name + "'");
}

double flit_omega(double phi_local, double phi_global) {
  return phi_local + std::max(phi_local - phi_global, 0.0);
}

double flit_weight(double omega_hat, double gamma) {
  return std::pow(1.0 - std::exp(-omega_hat), gamma);
}

double focal_weight(double loss, double gamma) {
  return std::pow(1.0 - std::exp(-loss), gamma);
}

void update_omega_bar(ReweightState& state, std::span<const double> batch_omegas, double beta) {
  if (batch_omegas.empty()) return;
  double mean = 0.0;
  for (double w : batch_omegas) mean += w;
  mean /= static_cast<double>(batch_omegas.size());
  if (!state.initialized) {
    state.omega_bar = mean;
    state.initialized = true;
  } else {
    state.omega_bar = beta * state.omega_bar + (1.0 - beta) * mean;
  }
}

double vat_divergence(std::span<const double> clean, std::span<const double> perturbed,
                      TaskType task_type) {
  if (clean.size() != perturbed.size()) throw ShapeMismatch("vat_divergence width mismatch");
  if (task_type == TaskType::Regression) {
    double acc = 0.0;
    for (std::size_t t = 0; t < clean.size(); ++t) {
      const double d = perturbed[t] - clean[t];
      acc += d * d;
    }
    return acc;
  }
  double acc = 0.0;
  for (std::size_t t = 0; t < clean.size(); ++t) {
    const double p = clamped_sigmoid(clean[t]);
    const double q = clamped_sigmoid(perturbed[t]);
    acc += p * std::log(p / q) + (1.0 - p) * std::log((1.0 - p) / (1.0 - q));
  }
  return acc / static_cast<double>(clean.size());
}

VatResult vat_discrepancy(const VatModel& model, const Matrix& clean_nodes, TaskType task_type,
                          const StrategyConfig& cfg, Rng& rng) {
  const std::vector<double> out_clean = model.eval(clean_nodes);

  Matrix dir(clean_nodes.rows, clean_nodes.cols);
  double norm = 0.0;
  do {
    for (double& v : dir.data) v = rng.normal();
    norm = frobenius(dir);
  } while (norm == 0.0);
  for (double& v : dir.data) v /= norm;

  std::vector<double> d_out;
  for (int it = 0; it < cfg.vat_power_iterations; ++it) {
    Matrix probe = clean_nodes;
    for (std::size_t i = 0; i < probe.data.size(); ++i) probe.data[i] += cfg.xi * dir.data[i];
    const std::vector<double> out_probe = model.eval(probe);
    divergence_grad_perturbed(out_clean, out_probe, task_type, 1.0, d_out);
    const Matrix g = model.input_gradient(probe, d_out);
    const double gnorm = frobenius(g);
    if (gnorm < kVatNormFloor) break;  // keep the current direction
    dir = g;
    for (double& v : dir.data) v /= gnorm;
  }

  VatResult result;
  result.r_adv = dir;
  for (double& v : result.r_adv.data) v *= cfg.epsilon;
  result.radius = frobenius(result.r_adv);

  Matrix adv = clean_nodes;
  for (std::size_t i = 0; i < adv.data.size(); ++i) adv.data[i] += cfg.xi * result.r_adv.data[i];
  result.delta = vat_divergence(out_clean, model.eval(adv), task_type);
  return result;
}

double vat_delta_given_radv(const VatModel& model, const Matrix& clean_nodes, const Matrix& r_adv,
                            TaskType task_type, double xi) {
  const std::vector<double> out_clean = model.eval(clean_nodes);
  Matrix adv = clean_nodes;
  for (std::size_t i = 0; i < adv.data.size(); ++i) adv.data[i] += xi * r_adv.data[i];
  return vat_divergence(out_clean, model.eval(adv), task_type);
}

MpnnVatModel::MpnnVatModel(const ParamVector& params, const MpnnConfig& cfg,
                           const GraphFeatures& feats)
    : params_(params), cfg_(cfg), feats_(feats) {}

std::size_t MpnnVatModel::output_count() const { return static_cast<std::size_t>(cfg_.task_count); }

std::vector<double> MpnnVatModel::eval(const Matrix& nodes) const {
  feats_.nodes = nodes;
  return forward(params_, cfg_, feats_).pred.values;
}

Matrix MpnnVatModel::input_gradient(const Matrix& nodes, std::span<const double> d_out) const {
  feats_.nodes = nodes;
  const ForwardTrace trace = forward(params_, cfg_, feats_);
  ParamVector scratch = zeros_like_layout(params_.layout);
  Matrix grad(nodes.rows, nodes.cols);
  backward(params_, cfg_, feats_, trace, d_out, scratch, &grad);
  return grad;
}

std::vector<std::uint8_t> mask_to_bytes(const Matrix& mask) {
  std::vector<std::uint8_t> out(mask.data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mask.data[i] != 0.0 ? 1 : 0;
  return out;
}

std::span<const double> ClientData::target_row(std::size_t row) const {
  return {labels->row(row), labels->cols};
}

std::span<const std::uint8_t> ClientData::mask_row(std::size_t row) const {
  return {mask.data() + row * labels->cols, labels->cols};
}

ObjectiveAux prepare_batch_aux(const ParamVector& local, const MpnnConfig& cfg,
                               const ClientData& data, std::span<const std::size_t> batch,
                               const StrategyConfig& strategy, ReweightState& state, Rng& vat_rng) {
  const std::size_t B = batch.size();
  ObjectiveAux aux;
  aux.weights.assign(B, 1.0);
  aux.phi_local.assign(B, 0.0);

  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t row = data.indices[batch[b]];
    const ForwardTrace trace = forward(local, cfg, data.feats[row]);
    aux.phi_local[b] =
        sample_loss(trace.pred, data.target_row(row), data.mask_row(row), cfg.task_type);
  }

  const auto require_cache = [&](std::size_t pos) {
    if (!state.has_global_cache || pos >= state.global_phi.size()) {
      throw MissingGlobalCache("global-model cache missing for this client round");
    }
  };

  switch (strategy.kind) {
    case StrategyKind::Erm:
    case StrategyKind::Prox:
      break;
    case StrategyKind::Focal:
      for (std::size_t b = 0; b < B; ++b) {
        aux.weights[b] = focal_weight(aux.phi_local[b], strategy.gamma);
      }
      break;
    case StrategyKind::Vat: {
      aux.delta_in_objective = true;
      aux.delta_coeff = strategy.vat_weight;
      aux.delta_weighted = false;
      aux.delta_local.assign(B, 0.0);
      aux.r_adv.resize(B);
      for (std::size_t b = 0; b < B; ++b) {
        const std::size_t row = data.indices[batch[b]];
        const MpnnVatModel model(local, cfg, data.feats[row]);
        VatResult vr =
            vat_discrepancy(model, data.feats[row].nodes, cfg.task_type, strategy, vat_rng);
        aux.delta_local[b] = vr.delta;
        aux.r_adv[b] = std::move(vr.r_adv);
        aux.vat_radius_max_err =
            std::max(aux.vat_radius_max_err, std::abs(vr.radius - strategy.epsilon));
      }
      break;
    }
    case StrategyKind::Flit: {
      aux.omegas.assign(B, 0.0);
      for (std::size_t b = 0; b < B; ++b) {
        require_cache(batch[b]);
        aux.omegas[b] = flit_omega(aux.phi_local[b], state.global_phi[batch[b]]);
      }
      if (!state.initialized) {
        double mean = 0.0;
        for (double w : aux.omegas) mean += w;
        state.omega_bar = mean / static_cast<double>(B);
        state.initialized = true;
      }
      for (std::size_t b = 0; b < B; ++b) {
        const double omega_hat = state.omega_bar > 0.0 ? aux.omegas[b] / state.omega_bar : 0.0;
        aux.weights[b] = flit_weight(omega_hat, strategy.gamma);
      }
      break;
    }
    case StrategyKind::FlitPlus: {
      const bool need_delta = strategy.flit_plus_delta_in_objective || strategy.lambda != 0.0;
      aux.delta_in_objective = strategy.flit_plus_delta_in_objective;
      aux.delta_coeff = 1.0;
      aux.delta_weighted = true;
      aux.omegas.assign(B, 0.0);
      if (need_delta) {
        aux.delta_local.assign(B, 0.0);
        if (aux.delta_in_objective) aux.r_adv.resize(B);
        for (std::size_t b = 0; b < B; ++b) {
          const std::size_t row = data.indices[batch[b]];
          const MpnnVatModel model(local, cfg, data.feats[row]);
          VatResult vr =
              vat_discrepancy(model, data.feats[row].nodes, cfg.task_type, strategy, vat_rng);
          aux.delta_local[b] = vr.delta;
          if (aux.delta_in_objective) aux.r_adv[b] = std::move(vr.r_adv);
          aux.vat_radius_max_err =
              std::max(aux.vat_radius_max_err, std::abs(vr.radius - strategy.epsilon));
        }
      }
      for (std::size_t b = 0; b < B; ++b) {
        require_cache(batch[b]);
        const double delta_l = need_delta ? aux.delta_local[b] : 0.0;
        const double phi_plus_local = aux.phi_local[b] + strategy.lambda * delta_l;
        double phi_plus_global = state.global_phi[batch[b]];
        if (strategy.lambda != 0.0) {
          if (batch[b] >= state.global_delta.size()) {
            throw MissingGlobalCache("global Delta cache missing for this client round");
          }
          phi_plus_global += strategy.lambda * state.global_delta[batch[b]];
        }
        aux.omegas[b] = flit_omega(phi_plus_local, phi_plus_global);
      }
      if (!state.initialized) {
        double mean = 0.0;
        for (double w : aux.omegas) mean += w;
        state.omega_bar = mean / static_cast<double>(B);
        state.initialized = true;
      }
      for (std::size_t b = 0; b < B; ++b) {
        const double omega_hat = state.omega_bar > 0.0 ? aux.omegas[b] / state.omega_bar : 0.0;
        aux.weights[b] = flit_weight(omega_hat, strategy.gamma);
      }
      break;
    }
  }
  return aux;
}

double objective_value(const ParamVector& params, const ParamVector& global_params,
                       const MpnnConfig& cfg, const ClientData& data,
                       std::span<const std::size_t> batch, const StrategyConfig& strategy,
                       const ObjectiveAux& aux) {
  const std::size_t B = batch.size();
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t row = data.indices[batch[b]];
    const GraphFeatures& feats = data.feats[row];
    const ForwardTrace trace = forward(params, cfg, feats);
    const double L = sample_loss(trace.pred, data.target_row(row), data.mask_row(row), cfg.task_type);
    double term = aux.weights[b] * L;
    if (aux.delta_in_objective) {
      const GraphFeatures adv = perturbed_features(feats, aux.r_adv[b], strategy.xi);
      const ForwardTrace ptrace = forward(params, cfg, adv);
      const double delta = vat_divergence(trace.pred.values, ptrace.pred.values, cfg.task_type);
      term += aux.delta_coeff * (aux.delta_weighted ? aux.weights[b] : 1.0) * delta;
    }
    total += term;
  }
  total /= static_cast<double>(B);
  if (strategy.kind == StrategyKind::Prox) {
    if (!params.same_layout(global_params)) {
      throw LayoutMismatch("proximal term: local and global layouts differ");
    }
    double sq = 0.0;
    for (std::size_t i = 0; i < params.values.size(); ++i) {
      const double d = params.values[i] - global_params.values[i];
      sq += d * d;
    }
    total += 0.5 * strategy.mu * sq;
  }
  return total;
}

ObjectiveResult objective_gradient(const ParamVector& params, const ParamVector& global_params,
                                   const MpnnConfig& cfg, const ClientData& data,
                                   std::span<const std::size_t> batch,
                                   const StrategyConfig& strategy, const ObjectiveAux& aux,
                                   ParamVector& grad_accum) {
  const std::size_t B = batch.size();
  const double inv_b = 1.0 / static_cast<double>(B);
  double total = 0.0;
  std::vector<double> d_out(static_cast<std::size_t>(cfg.task_count));
  std::vector<double> d_div;
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t row = data.indices[batch[b]];
    const GraphFeatures& feats = data.feats[row];
    const ForwardTrace trace = forward(params, cfg, feats);
    const double L = sample_loss(trace.pred, data.target_row(row), data.mask_row(row), cfg.task_type);
    total += aux.weights[b] * L;

    std::fill(d_out.begin(), d_out.end(), 0.0);
    sample_loss_output_grad(trace.pred, data.target_row(row), data.mask_row(row), cfg.task_type,
                            aux.weights[b] * inv_b, d_out);
    backward(params, cfg, feats, trace, d_out, grad_accum);

    if (aux.delta_in_objective) {
      const double coeff = aux.delta_coeff * (aux.delta_weighted ? aux.weights[b] : 1.0);
      const GraphFeatures adv = perturbed_features(feats, aux.r_adv[b], strategy.xi);
      const ForwardTrace ptrace = forward(params, cfg, adv);
      const double delta = vat_divergence(trace.pred.values, ptrace.pred.values, cfg.task_type);
      total += coeff * delta;
      divergence_grad_perturbed(trace.pred.values, ptrace.pred.values, cfg.task_type,
                                coeff * inv_b, d_div);
      backward(params, cfg, adv, ptrace, d_div, grad_accum);
      divergence_grad_clean(trace.pred.values, ptrace.pred.values, cfg.task_type, coeff * inv_b,
                            d_div);
      backward(params, cfg, feats, trace, d_div, grad_accum);
    }
  }
  total *= inv_b;

  if (strategy.kind == StrategyKind::Prox) {
    if (!params.same_layout(global_params)) {
      throw LayoutMismatch("proximal term: local and global layouts differ");
    }
    double sq = 0.0;
    for (std::size_t i = 0; i < params.values.size(); ++i) {
      const double d = params.values[i] - global_params.values[i];
      sq += d * d;
      grad_accum.values[i] += strategy.mu * d;
    }
    total += 0.5 * strategy.mu * sq;
  }
  return {total};
}

namespace {

// Batch of POSITIONS into the client's index list. Clients at or below the
// batch size train full-batch in index order without touching the stream.
std::vector<std::size_t> draw_batch(std::size_t n, std::size_t batch_size, Rng& rng,
                                    std::vector<std::size_t>& scratch) {
  scratch.resize(n);
  for (std::size_t i = 0; i < n; ++i) scratch[i] = i;
  if (n <= batch_size) return scratch;
  for (std::size_t j = 0; j < batch_size; ++j) {
    const std::size_t k = j + rng.below(n - j);
    std::swap(scratch[j], scratch[k]);
  }
  return {scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(batch_size)};
}

double mean_of(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  double acc = 0.0;
  for (double x : xs) acc += x;
  return acc / static_cast<double>(xs.size());
}

}  // namespace

ClientUpdateResult client_update(const ParamVector& global_params, const MpnnConfig& cfg,
                                 const ClientData& data, const StrategyConfig& strategy,
                                 const TrainConfig& train, std::uint64_t run_seed, int client_id,
                                 int round) {
  if (data.indices.empty()) throw EmptyClientDataset("client_update: client has no samples");
  const std::size_t n = data.indices.size();

  const std::uint64_t base =
      mix_seed(run_seed, {static_cast<std::uint64_t>(client_id), static_cast<std::uint64_t>(round)});
  Rng rng_batch(mix_seed(base, {0}));
  Rng rng_vat(mix_seed(base, {1}));
  Rng rng_vat_global(mix_seed(base, {2}));

  ClientUpdateResult result;
  result.params = global_params;
  result.diag.client_id = client_id;
  result.diag.round = round;

  // Global-model pass: loss diagnostics for every strategy, plus the per-round
  // caches the reweighted strategies read.
  std::vector<double> phi_global(n, 0.0);
  for (std::size_t pos = 0; pos < n; ++pos) {
    const std::size_t row = data.indices[pos];
    const ForwardTrace trace = forward(global_params, cfg, data.feats[row]);
    phi_global[pos] =
        sample_loss(trace.pred, data.target_row(row), data.mask_row(row), cfg.task_type);
  }
  result.diag.loss_before = mean_of(phi_global);

  ReweightState state;
  const bool reweighted =
      strategy.kind == StrategyKind::Flit || strategy.kind == StrategyKind::FlitPlus;
  if (reweighted) {
    state.global_phi = phi_global;
    state.has_global_cache = true;
    if (strategy.kind == StrategyKind::FlitPlus && strategy.lambda != 0.0) {
      state.global_delta.assign(n, 0.0);
      for (std::size_t pos = 0; pos < n; ++pos) {
        const std::size_t row = data.indices[pos];
        const MpnnVatModel model(global_params, cfg, data.feats[row]);
        const VatResult vr = vat_discrepancy(model, data.feats[row].nodes, cfg.task_type, strategy,
                                             rng_vat_global);
        state.global_delta[pos] = vr.delta;
        result.diag.vat_radius_max_err =
            std::max(result.diag.vat_radius_max_err, std::abs(vr.radius - strategy.epsilon));
      }
    }
  }

  AdamState adam_state;
  ParamVector grad = zeros_like_layout(result.params.layout);
  std::vector<std::size_t> scratch;
  double sum_omega = 0.0, sum_weight = 0.0, sum_delta = 0.0;

  for (int step = 0; step < train.local_steps; ++step) {
    const std::vector<std::size_t> batch =
        draw_batch(n, static_cast<std::size_t>(train.batch_size), rng_batch, scratch);
    const ObjectiveAux aux =
        prepare_batch_aux(result.params, cfg, data, batch, strategy, state, rng_vat);
    grad.set_zero();
    const ObjectiveResult step_result =
        objective_gradient(result.params, global_params, cfg, data, batch, strategy, aux, grad);
    if (!std::isfinite(step_result.value)) {
      throw NumericError("non-finite objective in client update");
    }
    ensure_all_finite(grad.values, "client gradients");
    adam_step(result.params, grad, adam_state, train.adam);
    ensure_all_finite(result.params.values, "client parameters");
    if (reweighted) update_omega_bar(state, aux.omegas, strategy.beta);

    sum_omega += mean_of(aux.omegas);
    sum_weight += mean_of(aux.weights);
    sum_delta += mean_of(aux.delta_local);
    result.diag.vat_radius_max_err =
        std::max(result.diag.vat_radius_max_err, aux.vat_radius_max_err);
    ++result.diag.steps;
  }

  if (result.diag.steps > 0) {
    const double inv = 1.0 / result.diag.steps;
    result.diag.mean_omega = sum_omega * inv;
    result.diag.mean_weight = sum_weight * inv;
    result.diag.mean_delta = sum_delta * inv;
  }

  double loss_after = 0.0;
  for (std::size_t pos = 0; pos < n; ++pos) {
    const std::size_t row = data.indices[pos];
    const ForwardTrace trace = forward(result.params, cfg, data.feats[row]);
    loss_after +=
        sample_loss(trace.pred, data.target_row(row), data.mask_row(row), cfg.task_type);
  }
  result.diag.loss_after = loss_after / static_cast<double>(n);
  return result;
}

}  // namespace fedchem
