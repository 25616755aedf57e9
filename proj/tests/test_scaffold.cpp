#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "fedchem/rng.hpp"
#include "fedchem/scaffold.hpp"

using namespace fedchem;

namespace {

// Relabels atoms by a random permutation and shuffles the bond list; any
// isomorphism-invariant key must not move.
MolGraph permuted(const MolGraph& g, Rng& rng) {
  std::vector<std::size_t> perm(g.atoms.size());
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);

  MolGraph out;
  out.atoms.resize(g.atoms.size());
  for (std::size_t i = 0; i < g.atoms.size(); ++i) out.atoms[perm[i]] = g.atoms[i];
  for (const BondRecord& b : g.bonds) out.bonds.push_back({perm[b.a], perm[b.b], b.order});
  rng.shuffle(out.bonds);
  return out;
}

ScaffoldKey key_of(const std::string& smiles) {
  return canonical_key(murcko_scaffold(parse_smiles(smiles)));
}

}  // namespace

TEST_CASE("murcko fixtures: benzene, ethanol, toluene, diphenylmethane") {
  const MolGraph benzene = murcko_scaffold(parse_smiles("c1ccccc1"));
  CHECK(benzene.atoms.size() == 6);
  CHECK(benzene.bonds.size() == 6);

  const MolGraph none = murcko_scaffold(parse_smiles("CCO"));
  CHECK(none.atoms.empty());
  CHECK(none.bonds.empty());
  CHECK(canonical_key(none).is_empty);

  const MolGraph from_toluene = murcko_scaffold(parse_smiles("Cc1ccccc1"));
  CHECK(from_toluene.atoms.size() == 6);
  CHECK(canonical_key(from_toluene) == canonical_key(parse_smiles("c1ccccc1")));

  // The ring-connecting CH2 keeps degree 2, so it survives every prune pass.
  const MolGraph diphenylmethane = murcko_scaffold(parse_smiles("c1ccccc1Cc1ccccc1"));
  CHECK(diphenylmethane.atoms.size() == 13);
  CHECK(diphenylmethane.bonds.size() == 14);
}

TEST_CASE("murcko prunes long side chains and counter-fragments") {
  CHECK(key_of("CCCCc1ccccc1CC(C)C") == key_of("c1ccccc1"));
  CHECK(key_of("c1ccccc1.Cl") == key_of("c1ccccc1"));
  CHECK(key_of("CC(C)(C)C") == key_of("O"));  // both acyclic -> the shared empty key
}

TEST_CASE("murcko is idempotent on a mixed corpus") {
  const char* corpus[] = {
      "c1ccccc1",  "Cc1ccccc1", "CCO",       "c1ccccc1Cc1ccccc1", "c1ccc2ccccc2c1",
      "C1CCCCC1",  "CC1CC1CO",  "O1CCNCC1C", "c1ccc(c2ccccc2)cc1", "CC(=O)Oc1ccccc1C(=O)O",
  };
  for (const char* smiles : corpus) {
    const MolGraph once = murcko_scaffold(parse_smiles(smiles));
    const MolGraph twice = murcko_scaffold(once);
    CHECK(once.atoms.size() == twice.atoms.size());
    CHECK(canonical_key(once) == canonical_key(twice));
  }
}

TEST_CASE("canonical digests are stable anchors") {
  CHECK(canonical_key(parse_smiles("c1ccccc1")).hex() == "598a0353ca407c0be8d451425c237404");
  const ScaffoldKey empty = canonical_key(murcko_scaffold(parse_smiles("CCO")));
  CHECK(empty.hex() == "160a76d7c32f99e14723375ce127fea4");
  CHECK(empty.atom_count == 0);
}

TEST_CASE("canonical_key is invariant under random atom permutations") {
  const char* corpus[] = {
      "c1ccccc1",                // fully symmetric
      "C1CCCCC1",                // saturated, fully symmetric
      "c1ccc2ccccc2c1",          // fused
      "c1ccncc1",                // heteroatom breaks symmetry
      "c1ccc(c2ccccc2)cc1",      // bridge bond
      "C1CCC2(CC1)CCCC2",        // spiro
      "c1cc[nH]c1",              // explicit-H label
      "C1CC1C1CC1",              // two rings, bridge
  };
  Rng rng(20240817);
  for (const char* smiles : corpus) {
    const MolGraph base = murcko_scaffold(parse_smiles(smiles));
    const ScaffoldKey key = canonical_key(base);
    const std::string cert = canonical_certificate(base);
    for (int p = 0; p < 100; ++p) {
      const MolGraph shuffled = permuted(base, rng);
      CHECK(canonical_key(shuffled) == key);
      CHECK(canonical_certificate(shuffled) == cert);
    }
  }
}

TEST_CASE("distinct structures get distinct keys") {
  const ScaffoldKey benzene = canonical_key(parse_smiles("c1ccccc1"));
  const ScaffoldKey cyclohexane = canonical_key(parse_smiles("C1CCCCC1"));
  const ScaffoldKey pyridine = canonical_key(parse_smiles("c1ccncc1"));
  const ScaffoldKey thiophene = canonical_key(parse_smiles("c1ccsc1"));
  const ScaffoldKey furan = canonical_key(parse_smiles("c1ccoc1"));
  const std::set<std::string> hexes{benzene.hex(), cyclohexane.hex(), pyridine.hex(),
                                    thiophene.hex(), furan.hex()};
  CHECK(hexes.size() == 5);
}

TEST_CASE("plain vertex refinement cannot split these; the certificate must") {
  // A 6-cycle and two disjoint 3-cycles: same atom count, same degrees, same
  // local neighborhoods at every refinement depth.
  const MolGraph six = parse_smiles("C1CCCCC1");
  const MolGraph two_threes = parse_smiles("C1CC1.C1CC1");
  CHECK(six.atoms.size() == two_threes.atoms.size());
  CHECK(six.bonds.size() == two_threes.bonds.size());
  CHECK_FALSE(canonical_key(six) == canonical_key(two_threes));
}

TEST_CASE("charge and explicit hydrogens are part of the identity") {
  const MolGraph a = parse_smiles("C1CC[N]CC1");
  const MolGraph b = parse_smiles("C1CC[N+]CC1");
  const MolGraph c = parse_smiles("C1CC[NH]CC1");
  CHECK_FALSE(canonical_key(a) == canonical_key(b));
  CHECK_FALSE(canonical_key(a) == canonical_key(c));
}

TEST_CASE("group_by_scaffold: grouping, order and membership lookups") {
  std::vector<MolGraph> graphs;
  graphs.push_back(parse_smiles("c1ccccc1"));       // 0: benzene
  graphs.push_back(parse_smiles("Cc1ccccc1"));      // 1: toluene -> benzene
  graphs.push_back(parse_smiles("CCO"));            // 2: acyclic
  graphs.push_back(parse_smiles("C1CCCCC1"));       // 3: cyclohexane
  graphs.push_back(parse_smiles("CCc1ccccc1"));     // 4: -> benzene
  graphs.push_back(parse_smiles("CCCC"));           // 5: acyclic

  const std::vector<std::size_t> indices{0, 1, 2, 3, 4, 5};
  const ScaffoldGroups groups = group_by_scaffold(graphs, indices);

  REQUIRE(groups.keys.size() == 3);
  CHECK(groups.total_members() == 6);
  // Largest group first: benzene x3; the two-member acyclic group next.
  CHECK(groups.members[0] == std::vector<std::size_t>{0, 1, 4});
  CHECK(groups.members[1] == std::vector<std::size_t>{2, 5});
  CHECK(groups.members[2] == std::vector<std::size_t>{3});
  CHECK(groups.keys[1].is_empty);

  CHECK(groups.group_of(4) == 0);
  CHECK(groups.group_of(5) == 1);
  CHECK(groups.group_of(3) == 2);
  CHECK(groups.group_of(99) == static_cast<std::size_t>(-1));
}

TEST_CASE("three-molecule grouping fixture") {
  std::vector<MolGraph> graphs;
  graphs.push_back(parse_smiles("c1ccccc1"));
  graphs.push_back(parse_smiles("Cc1ccccc1"));
  graphs.push_back(parse_smiles("CCO"));
  const std::vector<std::size_t> indices{0, 1, 2};
  const ScaffoldGroups groups = group_by_scaffold(graphs, indices);
  REQUIRE(groups.keys.size() == 2);
  CHECK(groups.members[0] == std::vector<std::size_t>{0, 1});
  CHECK(groups.members[1] == std::vector<std::size_t>{2});
}

TEST_CASE("group order ties on size break by digest bytes") {
  std::vector<MolGraph> graphs;
  graphs.push_back(parse_smiles("c1ccccc1"));
  graphs.push_back(parse_smiles("C1CCCCC1"));
  const std::vector<std::size_t> indices{0, 1};
  const ScaffoldGroups groups = group_by_scaffold(graphs, indices);
  REQUIRE(groups.keys.size() == 2);
  CHECK(groups.keys[0].digest < groups.keys[1].digest);
}
