#include "fedchem/fedcore.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <thread>

namespace fedchem {

namespace {

constexpr std::uint64_t kTagInit = 0x696e6974;    // "init"
constexpr std::uint64_t kTagSelect = 0x73656c65;  // "sele"

std::vector<int> select_clients(std::uint64_t run_seed, int round, int num_clients,
                                double fraction) {
  const int m = std::clamp(
      static_cast<int>(std::ceil(fraction * static_cast<double>(num_clients))), 1, num_clients);
  std::vector<int> ids(static_cast<std::size_t>(num_clients));
  std::iota(ids.begin(), ids.end(), 0);
  if (m == num_clients) return ids;

  Rng rng(mix_seed(run_seed, {kTagSelect, static_cast<std::uint64_t>(round)}));
  for (int j = 0; j < m; ++j) {
    const std::size_t k = static_cast<std::size_t>(j) +
                          rng.below(static_cast<std::uint64_t>(num_clients - j));
    std::swap(ids[static_cast<std::size_t>(j)], ids[k]);
  }
  ids.resize(static_cast<std::size_t>(m));
  std::sort(ids.begin(), ids.end());
  return ids;
}

Matrix gather_rows(const Matrix& full, std::span<const std::size_t> indices) {
  Matrix out(indices.size(), full.cols);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const double* src = full.row(indices[r]);
    std::copy(src, src + full.cols, out.row(r));
  }
  return out;
}

}  // namespace

ParamVector fed_avg_aggregate(std::span<const ParamVector> client_params,
                              std::span<const std::size_t> sizes) {
  if (client_params.empty()) throw std::invalid_argument("aggregate: no client parameters");
  if (client_params.size() != sizes.size()) {
    throw std::invalid_argument("aggregate: parameter/size count mismatch");
  }
  std::size_t total = 0;
  for (std::size_t s : sizes) total += s;
  if (total == 0) throw std::invalid_argument("aggregate: all client sizes are zero");

  ParamVector out = zeros_like_layout(client_params[0].layout);
  const double inv_total = static_cast<double>(total);
  for (std::size_t l = 0; l < client_params.size(); ++l) {
    if (!client_params[l].same_layout(out)) {
      throw LayoutMismatch("aggregate: client parameter layouts differ");
    }
    const double w = static_cast<double>(sizes[l]) / inv_total;
    const std::vector<double>& src = client_params[l].values;
    for (std::size_t i = 0; i < src.size(); ++i) out.values[i] += w * src[i];
  }
  return out;
}

MetricReport evaluate_slice(const ParamVector& params, const MpnnConfig& cfg,
                            const EvalSlice& slice, MetricKind kind) {
  if (slice.labels == nullptr || slice.mask == nullptr) {
    throw std::invalid_argument("evaluate_slice: labels/mask missing");
  }
  const Matrix preds = predict_matrix(params, cfg, slice.feats, slice.indices);
  const Matrix targets = gather_rows(*slice.labels, slice.indices);
  const Matrix mask = gather_rows(*slice.mask, slice.indices);
  return evaluate(preds, targets, mask, kind);
}

int resolve_worker_threads(int configured) {
  int value = configured;
  if (const char* env = std::getenv("FEDCHEM_THREADS"); env != nullptr && *env != '\0') {
    char* end = nullptr;
    const long parsed = std::strtol(env, &end, 10);
    if (end != env && parsed > 0 && parsed < 4096) value = static_cast<int>(parsed);
  }
  return std::max(1, value);
}

FederationResult run_federation(const MpnnConfig& model_cfg, const FedConfig& fed,
                                std::span<const ClientData> clients, const EvalSlice* validation,
                                MetricKind val_metric, const RoundObserver& observer,
                                const ParamVector* resume_params, int resume_round) {
  if (fed.num_clients <= 0 || static_cast<std::size_t>(fed.num_clients) != clients.size()) {
    throw std::invalid_argument("run_federation: client view count != num_clients");
  }
  if (fed.comm_rounds <= 0) throw std::invalid_argument("run_federation: comm_rounds must be > 0");
  for (std::size_t l = 0; l < clients.size(); ++l) {
    if (clients[l].indices.empty()) {
      throw EmptyClientDataset("run_federation: client " + std::to_string(l) + " has no samples");
    }
  }

  TrainConfig train;
  train.local_steps = fed.local_steps;
  train.batch_size = fed.batch_size;
  train.adam = fed.adam;

  FederationResult result;
  result.final_params = resume_params != nullptr
                            ? *resume_params
                            : init_params(model_cfg, mix_seed(fed.run_seed, {kTagInit}));

  const int workers_cfg = resolve_worker_threads(fed.worker_threads);

  for (int round = resume_round; round < fed.comm_rounds; ++round) {
    const auto t0 = std::chrono::steady_clock::now();
    RoundRecord record;
    record.round = round;
    record.client_ids = select_clients(fed.run_seed, round, fed.num_clients, fed.client_fraction);
    const std::size_t m = record.client_ids.size();

    std::vector<std::optional<ClientUpdateResult>> updates(m);
    const int workers = std::min<int>(workers_cfg, static_cast<int>(m));
    const auto run_one = [&](std::size_t slot) {
      const int cid = record.client_ids[slot];
      updates[slot] = client_update(result.final_params, model_cfg,
                                    clients[static_cast<std::size_t>(cid)], fed.strategy, train,
                                    fed.run_seed, cid, round);
    };
    if (workers <= 1) {
      for (std::size_t slot = 0; slot < m; ++slot) run_one(slot);
    } else {
      std::atomic<std::size_t> next{0};
      std::exception_ptr failure;
      std::mutex failure_mu;
      std::vector<std::thread> pool;
      pool.reserve(static_cast<std::size_t>(workers));
      for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
          for (;;) {
            const std::size_t slot = next.fetch_add(1);
            if (slot >= m) return;
            try {
              run_one(slot);
            } catch (...) {
              const std::lock_guard<std::mutex> lock(failure_mu);
              if (!failure) failure = std::current_exception();
              return;
            }
          }
        });
      }
      for (std::thread& t : pool) t.join();
      if (failure) std::rethrow_exception(failure);
    }

    std::vector<ParamVector> round_params;
    std::vector<std::size_t> round_sizes;
    round_params.reserve(m);
    round_sizes.reserve(m);
    double loss_before = 0.0, loss_after = 0.0;
    for (std::size_t slot = 0; slot < m; ++slot) {
      ClientUpdateResult& u = *updates[slot];
      loss_before += u.diag.loss_before;
      loss_after += u.diag.loss_after;
      record.diags.push_back(u.diag);
      round_sizes.push_back(clients[static_cast<std::size_t>(record.client_ids[slot])].indices.size());
      round_params.push_back(std::move(u.params));
    }
    record.train_loss_before = loss_before / static_cast<double>(m);
    record.train_loss_after = loss_after / static_cast<double>(m);

    result.final_params = fed_avg_aggregate(round_params, round_sizes);

    if (validation != nullptr && !validation->indices.empty()) {
      const MetricReport report =
          evaluate_slice(result.final_params, model_cfg, *validation, val_metric);
      record.has_val = true;
      record.val_metric = report.aggregate;
      if (result.best_round < 0 ||
          metric_improves(val_metric, record.val_metric, result.best_val_metric)) {
        result.best_round = round;
        result.best_val_metric = record.val_metric;
        result.best_params = result.final_params;
      }
    }

    record.duration_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (observer) observer(record, result.final_params);
    result.history.push_back(std::move(record));
  }

  if (result.best_round < 0) {
    result.best_params = result.final_params;
    result.best_round = fed.comm_rounds - 1;
  }
  return result;
}

}  // namespace fedchem
