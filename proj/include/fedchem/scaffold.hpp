#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedchem/molgraph.hpp"

namespace fedchem {

/**
 * Murcko scaffold: iteratively deletes terminal (degree <= 1) atoms that are
 * not ring members until a fixed point. Acyclic inputs therefore reduce to
 * the empty graph. Surviving atoms keep their records and relative order;
 * bond endpoints are re-indexed to the compacted atom list.
 */
MolGraph murcko_scaffold(const MolGraph& graph);

/**
 * Isomorphism-invariant scaffold identity. The digest is a 128-bit hash of a
 * canonical certificate (canonical atom order, labels and adjacency); two
 * scaffolds compare equal iff their digests do. Empty scaffolds share one
 * well-known key.
 */
struct ScaffoldKey {
  std::array<std::uint8_t, 16> digest{};
  std::size_t atom_count = 0;
  bool is_empty = false;

  bool operator==(const ScaffoldKey&) const = default;
  std::string hex() const;
};

ScaffoldKey canonical_key(const MolGraph& scaffold);

// The certificate string the digest is computed over. Exposed so tests can
// compare full canonical forms, not just hashes.
std::string canonical_certificate(const MolGraph& scaffold);

/**
 * Scaffold groups over a subset of a dataset. `keys` and `members` are
 * parallel; members hold positions into the caller's index universe (the
 * values of `indices`, typically dataset row ids). Group order is pinned:
 * descending size, ties broken by ascending digest bytes.
 */
struct ScaffoldGroups {
  std::vector<ScaffoldKey> keys;
  std::vector<std::vector<std::size_t>> members;

  std::size_t total_members() const;
  // Position of the group containing `index`, or npos.
  std::size_t group_of(std::size_t index) const;
};

ScaffoldGroups group_by_scaffold(std::span<const MolGraph> graphs,
                                 std::span<const std::size_t> indices);

}  // namespace fedchem
