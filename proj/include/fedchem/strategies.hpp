#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedchem/nnet.hpp"
#include "fedchem/rng.hpp"

namespace fedchem {

struct MissingGlobalCache : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EmptyClientDataset : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class StrategyKind { Erm, Prox, Focal, Vat, Flit, FlitPlus };

std::string strategy_name(StrategyKind kind);
StrategyKind parse_strategy(const std::string& name);

struct StrategyConfig {
  StrategyKind kind = StrategyKind::Erm;
  double gamma = 1.0;       // focal / flit exponent
  double mu = 0.01;         // proximal coefficient
  double lambda = 0.1;      // weight of Delta inside phi+
  double vat_weight = 0.1;  // Delta coefficient for the plain VAT objective
  double epsilon = 1e-4;    // adversarial radius
  double xi = 2.5;          // perturbation step
  double beta = 0.8;        // omega_bar moving-average momentum
  int vat_power_iterations = 1;
  // The literal objective keeps an unscaled Delta term; disabling it (together
  // with gamma=0, lambda=0) reduces the objective to plain ERM.
  bool flit_plus_delta_in_objective = true;
};

/**
 * Per-client, per-round reweighting state: the omega normalizer and the
 * global-model caches computed once when the round starts (phi under the
 * received global model; for the VAT-augmented variant also Delta under it).
 * Cache slots are positions within the client's index list.
 */
struct ReweightState {
  double omega_bar = 0.0;
  bool initialized = false;
  bool has_global_cache = false;
  std::vector<double> global_phi;
  std::vector<double> global_delta;
};

// omega(x) = phi_local + max(phi_local - phi_global, 0): high when the local
// model struggles, higher still when it does worse than the global model.
double flit_omega(double phi_local, double phi_global);

// Instance weight (1 - exp(-omega_hat))^gamma; gamma = 0 is identically 1.
double flit_weight(double omega_hat, double gamma);

// Focal instance weight (1 - exp(-loss))^gamma; equals the (1-p_t)^gamma
// probability form when the loss is binary cross-entropy.
double focal_weight(double loss, double gamma);

// Moving average omega_bar <- beta*omega_bar + (1-beta)*mean(omegas); the
// first call (uninitialized state) sets omega_bar to the batch mean.
void update_omega_bar(ReweightState& state, std::span<const double> batch_omegas, double beta);

/**
 * Model surface the virtual-adversarial machinery works against: evaluate raw
 * outputs for a node-feature matrix, and pull an objective gradient back to
 * the node features. Implementations must be deterministic.
 */
class VatModel {
 public:
  virtual ~VatModel() = default;
  virtual std::size_t output_count() const = 0;
  virtual std::vector<double> eval(const Matrix& nodes) const = 0;
  virtual Matrix input_gradient(const Matrix& nodes, std::span<const double> d_out) const = 0;
};

// Output discrepancy D: squared Euclidean distance (regression) or mean
// task-wise Bernoulli KL on clamped sigmoid probabilities (classification).
double vat_divergence(std::span<const double> clean, std::span<const double> perturbed,
                      TaskType task_type);

struct VatResult {
  double delta = 0.0;
  Matrix r_adv;        // same shape as the node features, norm == epsilon
  double radius = 0.0; // Frobenius norm of r_adv
};

/**
 * Power-iteration estimate of the virtual adversarial direction: start from a
 * random unit direction d, take the input gradient g of D(F(x), F(x + xi*d)),
 * set d <- g/|g| (keeping d when |g| < 1e-12), repeat as configured; then
 * r_adv = epsilon*d and Delta = D(F(x), F(x + xi*r_adv)).
 */
VatResult vat_discrepancy(const VatModel& model, const Matrix& clean_nodes, TaskType task_type,
                          const StrategyConfig& cfg, Rng& rng);

// Delta for a fixed, already-chosen r_adv (the frozen-direction evaluation).
double vat_delta_given_radv(const VatModel& model, const Matrix& clean_nodes, const Matrix& r_adv,
                            TaskType task_type, double xi);

// Adapts one (params, graph) pair to the VatModel surface.
class MpnnVatModel : public VatModel {
 public:
  MpnnVatModel(const ParamVector& params, const MpnnConfig& cfg, const GraphFeatures& feats);
  std::size_t output_count() const override;
  std::vector<double> eval(const Matrix& nodes) const override;
  Matrix input_gradient(const Matrix& nodes, std::span<const double> d_out) const override;

 private:
  const ParamVector& params_;
  const MpnnConfig& cfg_;
  mutable GraphFeatures feats_;  // nodes swapped per call, edges reused
};

// Label-presence mask flattened to bytes, row-major, for cheap row views.
std::vector<std::uint8_t> mask_to_bytes(const Matrix& mask);

/**
 * Non-owning view of one client's training samples: a subset of dataset rows
 * over shared feature/label/mask storage (mask as bytes via mask_to_bytes).
 */
struct ClientData {
  std::span<const GraphFeatures> feats;
  const Matrix* labels = nullptr;
  std::span<const std::uint8_t> mask;
  std::span<const std::size_t> indices;

  std::span<const double> target_row(std::size_t row) const;
  std::span<const std::uint8_t> mask_row(std::size_t row) const;
};

/**
 * Everything the objective treats as a constant during one gradient step:
 * instance weights, adversarial directions, omegas (for the post-step
 * normalizer update) and diagnostics. Computed by prepare_batch_aux under the
 * current local parameters, then held fixed while the gradient (or a
 * finite-difference probe) is evaluated.
 */
struct ObjectiveAux {
  std::vector<double> weights;
  std::vector<double> phi_local;
  std::vector<double> omegas;
  std::vector<double> delta_local;
  std::vector<Matrix> r_adv;          // empty when Delta is not in the objective
  bool delta_in_objective = false;
  double delta_coeff = 0.0;           // vat_weight (plain VAT) or 1.0 (FLIT+)
  bool delta_weighted = false;        // FLIT+ weights its Delta term per sample
  double vat_radius_max_err = 0.0;
};

ObjectiveAux prepare_batch_aux(const ParamVector& local, const MpnnConfig& cfg,
                               const ClientData& data, std::span<const std::size_t> batch,
                               const StrategyConfig& strategy, ReweightState& state, Rng& vat_rng);

// Pure objective evaluation under frozen aux; used by finite differences and
// shared with the gradient path below.
double objective_value(const ParamVector& params, const ParamVector& global_params,
                       const MpnnConfig& cfg, const ClientData& data,
                       std::span<const std::size_t> batch, const StrategyConfig& strategy,
                       const ObjectiveAux& aux);

struct ObjectiveResult {
  double value = 0.0;
};

// Objective value plus parameter gradients (accumulated into grad_accum).
// Weights and r_adv in aux are constants; the proximal term and both branches
// of Delta are differentiated.
ObjectiveResult objective_gradient(const ParamVector& params, const ParamVector& global_params,
                                   const MpnnConfig& cfg, const ClientData& data,
                                   std::span<const std::size_t> batch,
                                   const StrategyConfig& strategy, const ObjectiveAux& aux,
                                   ParamVector& grad_accum);

struct ClientRoundDiag {
  int client_id = 0;
  int round = 0;
  double mean_omega = 0.0;
  double mean_weight = 0.0;
  double mean_delta = 0.0;
  double loss_before = 0.0;
  double loss_after = 0.0;
  double vat_radius_max_err = 0.0;
  int steps = 0;
};

struct TrainConfig {
  int local_steps = 10;  // K
  int batch_size = 64;   // B
  AdamConfig adam;
};

struct ClientUpdateResult {
  ParamVector params;
  ClientRoundDiag diag;
};

/**
 * One client round: copy the global snapshot, build the global-model caches
 * required by the strategy, then K minibatch Adam steps. All randomness comes
 * from streams derived from (run_seed, client_id, round), so the result is a
 * pure function of its arguments. Batches of size >= the client dataset use
 * every sample in index order and consume no randomness.
 */
ClientUpdateResult client_update(const ParamVector& global_params, const MpnnConfig& cfg,
                                 const ClientData& data, const StrategyConfig& strategy,
                                 const TrainConfig& train, std::uint64_t run_seed, int client_id,
                                 int round);

}  // namespace fedchem
