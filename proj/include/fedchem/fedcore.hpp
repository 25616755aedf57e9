#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "fedchem/eval.hpp"
#include "fedchem/strategies.hpp"

namespace fedchem {

/**
 * Size-weighted parameter average: sum_l (n_l / N) * theta_l with N the total
 * of `sizes`, accumulated in the order given (callers pass ascending client
 * id). Layouts must match; sizes must be positive in total.
 */
ParamVector fed_avg_aggregate(std::span<const ParamVector> client_params,
                              std::span<const std::size_t> sizes);

/**
 * A row subset of a dataset used for evaluation: spans over the full storage
 * plus the row indices belonging to the slice.
 */
struct EvalSlice {
  std::span<const GraphFeatures> feats;
  const Matrix* labels = nullptr;
  const Matrix* mask = nullptr;
  std::vector<std::size_t> indices;
};

// Predicts the slice rows under `params` and scores them columnwise.
MetricReport evaluate_slice(const ParamVector& params, const MpnnConfig& cfg,
                            const EvalSlice& slice, MetricKind kind);

struct FedConfig {
  int num_clients = 4;          // L
  int comm_rounds = 10;         // C
  int local_steps = 10;         // K
  int batch_size = 64;          // B
  double client_fraction = 1.0; // participating share, ceil(f*L) clients/round
  std::uint64_t run_seed = 0;
  StrategyConfig strategy;
  AdamConfig adam;
  int worker_threads = 1;       // FEDCHEM_THREADS env var overrides when set
};

struct RoundRecord {
  int round = 0;
  std::vector<int> client_ids;  // ascending; also the diag order
  double train_loss_before = 0.0;  // means over participating clients
  double train_loss_after = 0.0;
  bool has_val = false;
  double val_metric = std::numeric_limits<double>::quiet_NaN();
  double duration_seconds = 0.0;
  std::vector<ClientRoundDiag> diags;
};

struct FederationResult {
  ParamVector final_params;
  ParamVector best_params;  // by validation metric; == final when never scored
  int best_round = -1;
  double best_val_metric = std::numeric_limits<double>::quiet_NaN();
  std::vector<RoundRecord> history;
};

// Called after each round with the record and the freshly aggregated global
// parameters (checkpointing, tracing, early diagnostics).
using RoundObserver = std::function<void(const RoundRecord&, const ParamVector&)>;

// Effective worker count: FEDCHEM_THREADS (when set to a positive integer)
// overrides the configured value; anything below 1 means sequential.
int resolve_worker_threads(int configured);

/**
 * The outer communication loop. Each round: derive the participant set from
 * (run_seed, round), run every participant's local update (a pure function of
 * the broadcast parameters and its own seed stream, so sequential and
 * concurrent execution agree bitwise), aggregate by dataset size in ascending
 * client id order, then score the validation slice when one is given; the
 * best-scoring round's parameters are retained. Full participation draws no
 * selection randomness. Passing resume_params/resume_round continues an
 * interrupted run: rounds resume_round..comm_rounds-1 reproduce exactly what
 * an uninterrupted run would have done.
 */
FederationResult run_federation(const MpnnConfig& model_cfg, const FedConfig& fed,
                                std::span<const ClientData> clients,
                                const EvalSlice* validation, MetricKind val_metric,
                                const RoundObserver& observer = {},
                                const ParamVector* resume_params = nullptr, int resume_round = 0);

}  // namespace fedchem
