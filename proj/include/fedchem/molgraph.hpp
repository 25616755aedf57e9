#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedchem/tensor.hpp"

namespace fedchem {

enum class BondOrder : std::uint8_t { Single = 1, Double = 2, Triple = 3, Aromatic = 4 };

struct AtomRecord {
  std::string element;   // chemical symbol as written ("C", "Cl", "Se", ...)
  bool aromatic = false;
  int formal_charge = 0;
  int explicit_h = 0;    // bracket-specified hydrogen count; organic-subset atoms carry 0
  bool ring_member = false;
};

struct BondRecord {
  std::size_t a = 0;
  std::size_t b = 0;
  BondOrder order = BondOrder::Single;
};

/**
 * Heavy-atom molecular graph. Bonds are undirected, stored once with a < b
 * never implied (endpoints keep parse order); no self-loops, no duplicate
 * pairs. ring_member marks atoms lying on at least one cycle.
 */
struct MolGraph {
  std::vector<AtomRecord> atoms;
  std::vector<BondRecord> bonds;
  std::string source_text;

  std::vector<std::size_t> degrees() const;
};

struct ParseError : std::runtime_error {
  enum class Kind { EmptyInput, UnknownToken, UnbalancedParenthesis, UnmatchedRingClosure };

  ParseError(Kind k, std::size_t pos, const std::string& what_arg)
      : std::runtime_error(what_arg), kind(k), position(pos) {}

  Kind kind;
  std::size_t position;  // byte offset into the input where the problem was seen
};

/**
 * Parses a SMILES subset: organic-subset atoms (B,C,N,O,P,S,F,Cl,Br,I and
 * aromatic b,c,n,o,p,s), bracket atoms with charge and explicit hydrogens
 * (isotope and stereo markers are accepted and discarded), bond symbols
 * - = # : / \, branches, ring closures (digits and %nn), and the dot
 * disconnect. Bonds between two aromatic atoms default to aromatic order when
 * no explicit symbol is given. Hydrogens are never materialized as atoms.
 */
MolGraph parse_smiles(const std::string& text);

struct FeatureSpec {
  // Last entry is the catch-all; unknown elements map onto it.
  std::vector<std::string> element_vocab = {"C", "N", "O",  "F",  "P",  "S", "Cl",
                                            "Br", "I", "B", "Si", "Se", "other"};
  static constexpr int kDegreeSlots = 6;  // one-hot 0..5, higher degrees clamp to 5
  static constexpr int kEdgeWidth = 4;    // bond-order one-hot

  int node_width() const {
    return static_cast<int>(element_vocab.size()) + kDegreeSlots + 3;
  }
};

/**
 * Dense graph features for the network: one row per atom, and one row per
 * DIRECTED bond (each undirected bond contributes rows src->dst and dst->src,
 * in bond order). Node row layout: element one-hot | degree one-hot |
 * aromatic flag | formal charge | explicit-H count.
 */
struct GraphFeatures {
  Matrix nodes;                                      // n x node_width
  Matrix edge_feats;                                 // 2m x 4
  std::vector<std::pair<std::size_t, std::size_t>> edge_endpoints;  // (src, dst)

  std::size_t atom_count() const { return nodes.rows; }
};

GraphFeatures featurize(const MolGraph& graph, const FeatureSpec& spec = FeatureSpec{});

}  // namespace fedchem
