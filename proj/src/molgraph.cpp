#include "fedchem/molgraph.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <map>
#include <set>

namespace fedchem {

namespace {

bool is_upper(char c) { return c >= 'A' && c <= 'Z'; }
bool is_lower(char c) { return c >= 'a' && c <= 'z'; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }

std::string capitalize(const std::string& sym) {
  std::string out = sym;
  out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  return out;
}

// Bond symbol pending between the previous atom and whatever comes next.
// Stereo slashes carry no geometry here; they resolve to single bonds.
struct PendingBond {
  bool present = false;
  BondOrder order = BondOrder::Single;
};

struct RingOpening {
  std::size_t atom;
  PendingBond bond;
  std::size_t position;
};

class SmilesParser {
 public:
  explicit SmilesParser(const std::string& text) : text_(text) {}

  MolGraph run() {
    if (text_.empty()) throw ParseError(ParseError::Kind::EmptyInput, 0, "empty SMILES input");
    while (pos_ < text_.size()) {
      step();
    }
    if (pending_.present) {
      throw ParseError(ParseError::Kind::UnknownToken, text_.size(), "dangling bond symbol at end of input");
    }
    if (!branch_stack_.empty()) {
      throw ParseError(ParseError::Kind::UnbalancedParenthesis, text_.size(),
                       "unclosed branch parenthesis");
    }
    if (!ring_open_.empty()) {
      throw ParseError(ParseError::Kind::UnmatchedRingClosure, ring_open_.begin()->second.position,
                       "ring-closure digit " + std::to_string(ring_open_.begin()->first) +
                           " was never closed");
    }
    graph_.source_text = text_;
    mark_ring_members(graph_);
    return std::move(graph_);
  }

 private:
  void step() {
    const char c = text_[pos_];
    switch (c) {
      case '(':
        if (prev_ == kNone) {
          throw ParseError(ParseError::Kind::UnbalancedParenthesis, pos_,
                           "branch opened before any atom");
        }
        branch_stack_.push_back(prev_);
        ++pos_;
        return;
      case ')':
        if (branch_stack_.empty()) {
          throw ParseError(ParseError::Kind::UnbalancedParenthesis, pos_,
                           "branch closed without a matching opening");
        }
        if (pending_.present) {
          throw ParseError(ParseError::Kind::UnknownToken, pos_, "bond symbol before ')'");
        }
        prev_ = branch_stack_.back();
        branch_stack_.pop_back();
        ++pos_;
        return;
      case '-': set_pending(BondOrder::Single); return;
      case '/': set_pending(BondOrder::Single); return;
      case '\\': set_pending(BondOrder::Single); return;
      case '=': set_pending(BondOrder::Double); return;
      case '#': set_pending(BondOrder::Triple); return;
      case ':': set_pending(BondOrder::Aromatic); return;
      case '.':
        if (pending_.present) {
          throw ParseError(ParseError::Kind::UnknownToken, pos_, "dot disconnect after a bond symbol");
        }
        prev_ = kNone;
        ++pos_;
        return;
      case '%': {
        if (pos_ + 2 >= text_.size() || !is_digit(text_[pos_ + 1]) || !is_digit(text_[pos_ + 2])) {
          throw ParseError(ParseError::Kind::UnknownToken, pos_, "'%' must be followed by two digits");
        }
        const int id = (text_[pos_ + 1] - '0') * 10 + (text_[pos_ + 2] - '0');
        pos_ += 3;
        ring_token(id);
        return;
      }
      case '[':
        bracket_atom();
        return;
      default:
        break;
    }
    if (is_digit(c)) {
      ++pos_;
      ring_token(c - '0');
      return;
    }
    if (organic_atom()) return;
    throw ParseError(ParseError::Kind::UnknownToken, pos_,
                     std::string("unexpected character '") + c + "'");
  }

  void set_pending(BondOrder order) {
    if (pending_.present) {
      throw ParseError(ParseError::Kind::UnknownToken, pos_, "two consecutive bond symbols");
    }
    if (prev_ == kNone) {
      throw ParseError(ParseError::Kind::UnknownToken, pos_, "bond symbol before any atom");
    }
    pending_ = {true, order};
    ++pos_;
  }

  // Organic-subset atom outside brackets. Returns false if the current
  // character starts no such atom.
  bool organic_atom() {
    const char c = text_[pos_];
    static const std::array<std::string, 2> two_char = {"Cl", "Br"};
    for (const auto& sym : two_char) {
      if (c == sym[0] && pos_ + 1 < text_.size() && text_[pos_ + 1] == sym[1]) {
        pos_ += 2;
        add_atom(sym, false, 0, 0);
        return true;
      }
    }
    static const std::string one_char = "BCNOPSFI";
    if (one_char.find(c) != std::string::npos) {
      ++pos_;
      add_atom(std::string(1, c), false, 0, 0);
      return true;
    }
    static const std::string aromatic_chars = "bcnops";
    if (aromatic_chars.find(c) != std::string::npos) {
      ++pos_;
      add_atom(capitalize(std::string(1, c)), true, 0, 0);
      return true;
    }
    return false;
  }

  void bracket_atom() {
    const std::size_t open_pos = pos_;
    ++pos_;  // '['
    while (pos_ < text_.size() && is_digit(text_[pos_])) ++pos_;  // isotope, discarded

    std::string element;
    bool aromatic = false;
    if (pos_ < text_.size() && is_lower(text_[pos_])) {
      // Aromatic bracket symbols: se and as are two letters, the rest one.
      if (pos_ + 1 < text_.size() &&
          ((text_[pos_] == 's' && text_[pos_ + 1] == 'e') ||
           (text_[pos_] == 'a' && text_[pos_ + 1] == 's'))) {
        element = capitalize(text_.substr(pos_, 2));
        pos_ += 2;
      } else if (std::string("bcnops").find(text_[pos_]) != std::string::npos) {
        element = capitalize(std::string(1, text_[pos_]));
        ++pos_;
      } else {
        throw ParseError(ParseError::Kind::UnknownToken, pos_, "unknown aromatic symbol in brackets");
      }
      aromatic = true;
    } else if (pos_ < text_.size() && is_upper(text_[pos_])) {
      element = std::string(1, text_[pos_]);
      ++pos_;
      while (pos_ < text_.size() && is_lower(text_[pos_]) && element.size() < 3) {
        element += text_[pos_];
        ++pos_;
      }
    } else {
      throw ParseError(ParseError::Kind::UnknownToken, pos_, "bracket atom without an element symbol");
    }

    // Chirality marks are accepted and discarded.
    while (pos_ < text_.size() && text_[pos_] == '@') ++pos_;

    int explicit_h = 0;
    if (pos_ < text_.size() && text_[pos_] == 'H') {
      ++pos_;
      if (pos_ < text_.size() && is_digit(text_[pos_])) {
        explicit_h = 0;
        while (pos_ < text_.size() && is_digit(text_[pos_])) {
          explicit_h = explicit_h * 10 + (text_[pos_] - '0');
          ++pos_;
        }
      } else {
        explicit_h = 1;
      }
    }

    int charge = 0;
    if (pos_ < text_.size() && (text_[pos_] == '+' || text_[pos_] == '-')) {
      const char sign_char = text_[pos_];
      const int sign = sign_char == '+' ? 1 : -1;
      ++pos_;
      if (pos_ < text_.size() && is_digit(text_[pos_])) {
        int magnitude = 0;
        while (pos_ < text_.size() && is_digit(text_[pos_])) {
          magnitude = magnitude * 10 + (text_[pos_] - '0');
          ++pos_;
        }
        charge = sign * magnitude;
      } else {
        charge = sign;
        while (pos_ < text_.size() && text_[pos_] == sign_char) {
          charge += sign;
          ++pos_;
        }
      }
    }

    if (pos_ < text_.size() && text_[pos_] == ':') {
      ++pos_;  // atom class, discarded
      if (pos_ >= text_.size() || !is_digit(text_[pos_])) {
        throw ParseError(ParseError::Kind::UnknownToken, pos_, "atom class ':' without digits");
      }
      while (pos_ < text_.size() && is_digit(text_[pos_])) ++pos_;
    }

    if (pos_ >= text_.size() || text_[pos_] != ']') {
      throw ParseError(ParseError::Kind::UnknownToken, open_pos, "unterminated bracket atom");
    }
    ++pos_;
    add_atom(element, aromatic, charge, explicit_h);
  }

  void add_atom(const std::string& element, bool aromatic, int charge, int explicit_h) {
    AtomRecord atom;
    atom.element = element;
    atom.aromatic = aromatic;
    atom.formal_charge = charge;
    atom.explicit_h = explicit_h;
    graph_.atoms.push_back(atom);
    const std::size_t idx = graph_.atoms.size() - 1;
    if (prev_ != kNone) {
      add_bond(prev_, idx, pending_);
    }
    pending_ = PendingBond{};
    prev_ = idx;
  }

  void ring_token(int id) {
    if (prev_ == kNone) {
      throw ParseError(ParseError::Kind::UnknownToken, pos_, "ring closure before any atom");
    }
    auto it = ring_open_.find(id);
    if (it == ring_open_.end()) {
      ring_open_[id] = RingOpening{static_cast<std::size_t>(prev_), pending_, pos_};
      pending_ = PendingBond{};
      return;
    }
    const RingOpening opening = it->second;
    ring_open_.erase(it);
    if (opening.atom == static_cast<std::size_t>(prev_)) {
      throw ParseError(ParseError::Kind::UnknownToken, pos_, "ring closure to the same atom");
    }
    PendingBond bond;
    if (opening.bond.present && pending_.present) {
      if (opening.bond.order != pending_.order) {
        throw ParseError(ParseError::Kind::UnknownToken, pos_,
                         "conflicting bond orders on ring closure " + std::to_string(id));
      }
      bond = pending_;
    } else if (opening.bond.present) {
      bond = opening.bond;
    } else {
      bond = pending_;
    }
    add_bond(opening.atom, static_cast<std::size_t>(prev_), bond);
    pending_ = PendingBond{};
  }

  void add_bond(std::size_t a, std::size_t b, const PendingBond& pending) {
    const auto key = std::minmax(a, b);
    if (!bond_pairs_.insert(key).second) {
      throw ParseError(ParseError::Kind::UnknownToken, pos_,
                       "duplicate bond between atoms " + std::to_string(a) + " and " + std::to_string(b));
    }
    BondRecord bond;
    bond.a = a;
    bond.b = b;
    if (pending.present) {
      bond.order = pending.order;
    } else {
      bond.order = (graph_.atoms[a].aromatic && graph_.atoms[b].aromatic) ? BondOrder::Aromatic
                                                                          : BondOrder::Single;
    }
    graph_.bonds.push_back(bond);
  }

  // Bridge edges (Tarjan low-links, iterative) are exactly the edges on no
  // cycle; an atom is a ring member iff it has a non-bridge incident edge.
  static void mark_ring_members(MolGraph& g) {
    const std::size_t n = g.atoms.size();
    std::vector<std::vector<std::pair<std::size_t, std::size_t>>> adj(n);
    for (std::size_t e = 0; e < g.bonds.size(); ++e) {
      adj[g.bonds[e].a].push_back({g.bonds[e].b, e});
      adj[g.bonds[e].b].push_back({g.bonds[e].a, e});
    }
    std::vector<int> disc(n, -1), low(n, 0);
    std::vector<bool> bridge(g.bonds.size(), false);
    int timer = 0;
    struct Frame {
      std::size_t u;
      std::size_t parent_edge;
      std::size_t next;
    };
    std::vector<Frame> stack;
    for (std::size_t s = 0; s < n; ++s) {
      if (disc[s] != -1) continue;
      disc[s] = low[s] = timer++;
      stack.push_back({s, SIZE_MAX, 0});
      while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < adj[f.u].size()) {
          const auto [v, eid] = adj[f.u][f.next++];
          if (eid == f.parent_edge) continue;
          if (disc[v] == -1) {
            disc[v] = low[v] = timer++;
            stack.push_back({v, eid, 0});
          } else {
            low[f.u] = std::min(low[f.u], disc[v]);
          }
        } else {
          const Frame done = f;
          stack.pop_back();
          if (done.parent_edge != SIZE_MAX) {
            const BondRecord& pe = g.bonds[done.parent_edge];
            const std::size_t parent = pe.a == done.u ? pe.b : pe.a;
            low[parent] = std::min(low[parent], low[done.u]);
            if (low[done.u] > disc[parent]) bridge[done.parent_edge] = true;
          }
        }
      }
    }
    for (std::size_t e = 0; e < g.bonds.size(); ++e) {
      if (!bridge[e]) {
        g.atoms[g.bonds[e].a].ring_member = true;
        g.atoms[g.bonds[e].b].ring_member = true;
      }
    }
  }

  static constexpr std::size_t kNone = SIZE_MAX;

  const std::string& text_;
  std::size_t pos_ = 0;
  MolGraph graph_;
  std::size_t prev_ = kNone;
  PendingBond pending_;
  std::vector<std::size_t> branch_stack_;
  std::map<int, RingOpening> ring_open_;
  std::set<std::pair<std::size_t, std::size_t>> bond_pairs_;
};

}  // namespace

std::vector<std::size_t> MolGraph::degrees() const {
  std::vector<std::size_t> deg(atoms.size(), 0);
  for (const BondRecord& b : bonds) {
    ++deg[b.a];
    ++deg[b.b];
  }
  return deg;
}

MolGraph parse_smiles(const std::string& text) {
  std::size_t lo = 0, hi = text.size();
  while (lo < hi && std::isspace(static_cast<unsigned char>(text[lo]))) ++lo;
  while (hi > lo && std::isspace(static_cast<unsigned char>(text[hi - 1]))) --hi;
  const std::string trimmed = text.substr(lo, hi - lo);
  return SmilesParser(trimmed).run();
}

GraphFeatures featurize(const MolGraph& graph, const FeatureSpec& spec) {
  const std::size_t n = graph.atoms.size();
  const int width = spec.node_width();
  const int vocab = static_cast<int>(spec.element_vocab.size());

  GraphFeatures out;
  out.nodes = Matrix(n, static_cast<std::size_t>(width));
  const auto deg = graph.degrees();
  for (std::size_t i = 0; i < n; ++i) {
    const AtomRecord& atom = graph.atoms[i];
    int slot = vocab - 1;  // catch-all
    for (int k = 0; k < vocab; ++k) {
      if (spec.element_vocab[k] == atom.element) {
        slot = k;
        break;
      }
    }
    out.nodes.at(i, slot) = 1.0;
    const int d = std::min<int>(static_cast<int>(deg[i]), FeatureSpec::kDegreeSlots - 1);
    out.nodes.at(i, vocab + d) = 1.0;
    out.nodes.at(i, vocab + FeatureSpec::kDegreeSlots) = atom.aromatic ? 1.0 : 0.0;
    out.nodes.at(i, vocab + FeatureSpec::kDegreeSlots + 1) = static_cast<double>(atom.formal_charge);
    out.nodes.at(i, vocab + FeatureSpec::kDegreeSlots + 2) = static_cast<double>(atom.explicit_h);
  }

  out.edge_feats = Matrix(2 * graph.bonds.size(), FeatureSpec::kEdgeWidth);
  out.edge_endpoints.reserve(2 * graph.bonds.size());
  for (std::size_t e = 0; e < graph.bonds.size(); ++e) {
    const BondRecord& bond = graph.bonds[e];
    const int order_slot = static_cast<int>(bond.order) - 1;
    out.edge_feats.at(2 * e, order_slot) = 1.0;
    out.edge_feats.at(2 * e + 1, order_slot) = 1.0;
    out.edge_endpoints.push_back({bond.a, bond.b});
    out.edge_endpoints.push_back({bond.b, bond.a});
  }
  return out;
}

}  // namespace fedchem
