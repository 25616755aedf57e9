#include "fedchem/partition.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "fedchem/rng.hpp"

namespace fedchem {

SplitIndices split_dataset(std::size_t n, const SplitSpec& spec) {
  for (double r : spec.ratios) {
    if (!(r >= 0.0) || !(r <= 1.0)) throw InvalidRatios("split ratios must lie in [0,1]");
  }
  const double total = spec.ratios[0] + spec.ratios[1] + spec.ratios[2];
  if (std::abs(total - 1.0) > 1e-9) throw InvalidRatios("split ratios must sum to 1");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(spec.seed);
  rng.shuffle(order);

  const std::size_t n_train = static_cast<std::size_t>(spec.ratios[0] * static_cast<double>(n));
  const std::size_t n_valid = static_cast<std::size_t>(spec.ratios[1] * static_cast<double>(n));

  SplitIndices out;
  out.train.assign(order.begin(), order.begin() + n_train);
  out.valid.assign(order.begin() + n_train, order.begin() + n_train + n_valid);
  out.test.assign(order.begin() + n_train + n_valid, order.end());
  return out;
}

std::vector<std::size_t> ClientPartition::sizes() const {
  std::vector<std::size_t> out;
  out.reserve(assignments.size());
  for (const auto& a : assignments) out.push_back(a.size());
  return out;
}

std::vector<std::vector<std::size_t>> lda_partition(const ScaffoldGroups& groups,
                                                    std::size_t num_clients, double alpha,
                                                    std::uint64_t seed) {
  if (num_clients == 0) throw std::invalid_argument("lda_partition: need at least one client");
  if (!(alpha > 0.0)) throw std::invalid_argument("lda_partition: alpha must be positive");

  Rng rng(seed);
  std::vector<std::vector<std::size_t>> clients(num_clients);
  for (std::size_t g = 0; g < groups.members.size(); ++g) {
    const std::vector<double> p = rng.dirichlet(alpha, num_clients);
    for (std::size_t idx : groups.members[g]) {
      clients[rng.categorical(p)].push_back(idx);
    }
  }
  return clients;
}

ClientPartition balance_clients(const std::vector<std::vector<std::size_t>>& raw, double alpha,
                                std::uint64_t seed) {
  ClientPartition out;
  out.alpha = alpha;
  out.num_clients = raw.size();
  out.seed = seed;
  out.assignments = raw;

  Rng rng(mix_seed(seed, {0x62616c616eULL}));  // "balan"
  for (;;) {
    std::size_t largest = 0, smallest = 0;
    for (std::size_t c = 1; c < out.assignments.size(); ++c) {
      if (out.assignments[c].size() > out.assignments[largest].size()) largest = c;
      if (out.assignments[c].size() < out.assignments[smallest].size()) smallest = c;
    }
    if (out.assignments[largest].size() - out.assignments[smallest].size() <= 1) break;
    auto& from = out.assignments[largest];
    const std::size_t pick = rng.below(from.size());
    out.assignments[smallest].push_back(from[pick]);
    from.erase(from.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  return out;
}

double heterogeneity_index(const ClientPartition& partition, const ScaffoldGroups& groups) {
  const std::size_t L = partition.num_clients;
  if (L < 2) return 0.0;
  const std::size_t G = groups.members.size();

  std::unordered_map<std::size_t, std::size_t> group_of;
  for (std::size_t g = 0; g < G; ++g) {
    for (std::size_t idx : groups.members[g]) group_of[idx] = g;
  }

  // Empirical distribution over scaffold groups, one row per client.
  std::vector<std::vector<double>> dist(L, std::vector<double>(G, 0.0));
  for (std::size_t c = 0; c < L; ++c) {
    const auto& members = partition.assignments[c];
    if (members.empty()) continue;
    for (std::size_t idx : members) {
      const auto it = group_of.find(idx);
      if (it == group_of.end()) {
        throw std::invalid_argument("heterogeneity_index: partition index missing from groups");
      }
      dist[c][it->second] += 1.0;
    }
    for (double& v : dist[c]) v /= static_cast<double>(members.size());
  }

  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < L; ++a) {
    for (std::size_t b = a + 1; b < L; ++b) {
      double tv = 0.0;
      for (std::size_t g = 0; g < G; ++g) tv += std::abs(dist[a][g] - dist[b][g]);
      sum += 0.5 * tv;
      ++pairs;
    }
  }
  return sum / static_cast<double>(pairs);
}

ClientPartition make_client_partition(const ScaffoldGroups& groups, std::size_t num_clients,
                                      double alpha, std::uint64_t seed) {
  const auto raw = lda_partition(groups, num_clients, alpha, mix_seed(seed, {0x6c6461ULL}));
  return balance_clients(raw, alpha, seed);
}

}  // namespace fedchem
