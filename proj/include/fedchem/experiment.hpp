#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedchem/dataset.hpp"
#include "fedchem/fedcore.hpp"
#include "fedchem/partition.hpp"

namespace fedchem {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// compare_runs refuses to pool results produced from different data files.
struct MixedDatasets : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/**
 * One experiment: dataset -> shuffle split -> scaffold groups on the training
 * rows -> Dirichlet client partition -> federated training -> evaluation.
 * Seeds left unpinned in the file are derived from a master seed.
 */
struct RunConfig {
  DatasetFileSpec dataset;

  SplitSpec split;
  bool split_seed_pinned = false;

  std::size_t num_clients = 4;
  double alpha = 1.0;
  std::uint64_t partition_seed = 0;
  bool partition_seed_pinned = false;

  FedConfig federation;  // num_clients mirrored in; carries strategy + adam
  bool run_seed_pinned = false;

  MpnnConfig model;  // task count/type and feature dims are set from the data

  MetricKind val_metric = MetricKind::Rmse;
  bool metric_pinned = false;  // unpinned: RMSE for regression, AUC otherwise

  bool grid = false;
  int checkpoint_every = 0;  // emit round checkpoints every N rounds; 0 = off

  std::optional<std::uint64_t> master_seed;
};

// Parses the JSON document; a top-level "seed" is applied as master seed.
RunConfig parse_run_config(const nlohmann::json& j);

// Derives every non-pinned seed (split, partition, run) from master_seed.
void apply_master_seed(RunConfig& cfg, std::uint64_t master_seed);

// Canonical config echo embedded in the results payload. Execution details
// that must not affect results (worker threads, checkpoint cadence) are
// excluded, so payloads from equivalent runs compare byte-for-byte.
nlohmann::json run_config_payload(const RunConfig& cfg);

struct ExperimentOutput {
  nlohmann::json document;  // {"payload": ..., "meta": ...} as written to disk
  double test_metric_best = 0.0;
  double test_metric_final = 0.0;
  int best_round = -1;
  std::string results_path;
};

/**
 * Runs the experiment and writes results.json, partition.json, scaffolds.csv,
 * rejects.csv, rounds.csv, diagnostics.jsonl and final/best checkpoints under
 * out_dir. With grid enabled, sweeps the strategy's tunable(s), selects the
 * best validation score, and reruns the winner for the artifacts; the sweep
 * table lands in the payload.
 */
ExperimentOutput run_experiment(const RunConfig& cfg, const std::string& out_dir);

// Linear-interpolation quantile (the common "type 7") of an ascending sample.
double quantile_type7(std::span<const double> sorted, double p);

/**
 * Pools results.json files from repeated runs: groups by (strategy, alpha),
 * reports n/median/q25/q75/IQR of the best-round test metric per group.
 * All inputs must come from the same data file.
 */
nlohmann::json compare_runs(const std::vector<std::string>& results_paths);

}  // namespace fedchem
