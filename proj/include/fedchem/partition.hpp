#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "fedchem/scaffold.hpp"

namespace fedchem {

struct InvalidRatios : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SplitSpec {
  std::array<double, 3> ratios{0.8, 0.1, 0.1};  // train, valid, test; must sum to 1
  std::uint64_t seed = 0;
};

struct SplitIndices {
  std::vector<std::size_t> train, valid, test;
};

/**
 * Seed-deterministic shuffle split. Train and validation take the floor of
 * their ratios; test absorbs the remainder, so every index lands in exactly
 * one split.
 */
SplitIndices split_dataset(std::size_t n, const SplitSpec& spec);

struct ClientPartition {
  double alpha = 0.0;
  std::size_t num_clients = 0;
  std::uint64_t seed = 0;
  std::vector<std::vector<std::size_t>> assignments;  // per client, dataset indices

  std::vector<std::size_t> sizes() const;
};

/**
 * Scaffold-wise Dirichlet assignment: for each scaffold group (in the pinned
 * group order) draw client proportions p ~ Dirichlet(alpha * 1_L), then assign
 * each member to a client categorically with proportions p. Small alpha
 * concentrates whole scaffold groups onto few clients.
 */
std::vector<std::vector<std::size_t>> lda_partition(const ScaffoldGroups& groups,
                                                    std::size_t num_clients, double alpha,
                                                    std::uint64_t seed);

/**
 * Rebalances raw assignments by repeatedly moving a seed-chosen index from the
 * largest client to the smallest until sizes differ by at most one. Ties on
 * size resolve to the lowest client id.
 */
ClientPartition balance_clients(const std::vector<std::vector<std::size_t>>& raw, double alpha,
                                std::uint64_t seed);

// Mean pairwise total-variation distance between clients' empirical scaffold
// distributions; 0 when all clients match, approaching 1 for disjoint support.
double heterogeneity_index(const ClientPartition& partition, const ScaffoldGroups& groups);

// lda_partition followed by balance_clients, with derived sub-seeds.
ClientPartition make_client_partition(const ScaffoldGroups& groups, std::size_t num_clients,
                                      double alpha, std::uint64_t seed);

}  // namespace fedchem
