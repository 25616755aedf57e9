#include "fedchem/scaffold.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>
#include <map>
#include <stdexcept>

namespace fedchem {

namespace {

std::array<std::uint8_t, 16> digest128(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1 || len < 16) {
    throw std::runtime_error("scaffold digest computation failed");
  }
  std::array<std::uint8_t, 16> out{};
  std::copy(md, md + 16, out.begin());
  return out;
}

/**
 * Canonical labeling by color refinement with individualization. Colors start
 * from full atom labels plus local bond context, refine to a fixed point, and
 * ambiguous color classes are resolved by branching over every member of the
 * smallest class, keeping the lexicographically least certificate. Branching
 * over the whole class (not just one member) is what makes the result
 * independent of input atom order.
 */
class Canonicalizer {
 public:
  explicit Canonicalizer(const MolGraph& g) : g_(g), n_(g.atoms.size()), adj_(n_) {
    for (const BondRecord& b : g.bonds) {
      adj_[b.a].push_back({b.b, static_cast<int>(b.order)});
      adj_[b.b].push_back({b.a, static_cast<int>(b.order)});
    }
  }

  std::string run() {
    if (n_ == 0) return "n:0;";
    return canon(initial_colors());
  }

 private:
  using Colors = std::vector<int>;

  Colors initial_colors() const {
    std::map<std::string, std::vector<std::size_t>> buckets;
    for (std::size_t i = 0; i < n_; ++i) {
      const AtomRecord& a = g_.atoms[i];
      std::vector<int> orders;
      for (const auto& [nbr, order] : adj_[i]) {
        (void)nbr;
        orders.push_back(order);
      }
      std::sort(orders.begin(), orders.end());
      std::string key = a.element + "|" + (a.aromatic ? "1" : "0") + "|" +
                        std::to_string(a.formal_charge) + "|" + std::to_string(a.explicit_h) +
                        "|" + std::to_string(adj_[i].size()) + "|";
      for (int o : orders) key += std::to_string(o) + ",";
      buckets[key].push_back(i);
    }
    Colors colors(n_);
    int next = 0;
    for (const auto& [key, members] : buckets) {
      (void)key;
      for (std::size_t i : members) colors[i] = next;
      ++next;
    }
    return colors;
  }

  // One refinement pass to a fixed point; colors come back as dense ranks in
  // a canonical (signature-sorted) order.
  Colors refine(Colors colors) const {
    for (;;) {
      std::map<std::vector<long long>, std::vector<std::size_t>> buckets;
      for (std::size_t i = 0; i < n_; ++i) {
        std::vector<long long> sig;
        sig.push_back(colors[i]);
        std::vector<long long> nbrs;
        for (const auto& [nbr, order] : adj_[i]) {
          nbrs.push_back(static_cast<long long>(order) * (static_cast<long long>(n_) + 1) +
                         colors[nbr]);
        }
        std::sort(nbrs.begin(), nbrs.end());
        sig.insert(sig.end(), nbrs.begin(), nbrs.end());
        buckets[sig].push_back(i);
      }
      Colors next(n_);
      int id = 0;
      for (const auto& [sig, members] : buckets) {
        (void)sig;
        for (std::size_t i : members) next[i] = id;
        ++id;
      }
      const auto distinct = [](const Colors& c) {
        std::vector<int> tmp = c;
        std::sort(tmp.begin(), tmp.end());
        return std::unique(tmp.begin(), tmp.end()) - tmp.begin();
      };
      if (distinct(next) == distinct(colors)) return next;
      colors = std::move(next);
    }
  }

  std::string canon(Colors colors) const {
    colors = refine(std::move(colors));
    std::map<int, std::vector<std::size_t>> classes;
    for (std::size_t i = 0; i < n_; ++i) classes[colors[i]].push_back(i);
    if (classes.size() == n_) return certificate(colors);

    // Smallest ambiguous class, ties by color id; branch over all members.
    int target = -1;
    std::size_t best_size = SIZE_MAX;
    for (const auto& [color, members] : classes) {
      if (members.size() > 1 && members.size() < best_size) {
        best_size = members.size();
        target = color;
      }
    }
    std::string best;
    for (std::size_t atom : classes[target]) {
      Colors branched = colors;
      branched[atom] = static_cast<int>(n_);  // fresh unique color
      std::string cert = canon(std::move(branched));
      if (best.empty() || cert < best) best = std::move(cert);
    }
    return best;
  }

  std::string certificate(const Colors& colors) const {
    std::vector<std::size_t> order(n_);
    for (std::size_t i = 0; i < n_; ++i) order[colors[i]] = i;
    std::string out = "n:" + std::to_string(n_) + ";";
    for (std::size_t r = 0; r < n_; ++r) {
      const AtomRecord& a = g_.atoms[order[r]];
      out += "a:" + a.element + "," + (a.aromatic ? "1" : "0") + "," +
             std::to_string(a.formal_charge) + "," + std::to_string(a.explicit_h) + ";";
    }
    std::vector<std::array<int, 3>> edges;
    for (const BondRecord& b : g_.bonds) {
      const int ra = colors[b.a], rb = colors[b.b];
      edges.push_back({std::min(ra, rb), std::max(ra, rb), static_cast<int>(b.order)});
    }
    std::sort(edges.begin(), edges.end());
    for (const auto& e : edges) {
      out += "e:" + std::to_string(e[0]) + "," + std::to_string(e[1]) + "," +
             std::to_string(e[2]) + ";";
    }
    return out;
  }

  const MolGraph& g_;
  std::size_t n_;
  std::vector<std::vector<std::pair<std::size_t, int>>> adj_;
};

}  // namespace

MolGraph murcko_scaffold(const MolGraph& graph) {
  const std::size_t n = graph.atoms.size();
  std::vector<bool> alive(n, true);
  std::vector<std::size_t> degree = graph.degrees();

  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (!alive[i] || graph.atoms[i].ring_member || degree[i] > 1) continue;
      alive[i] = false;
      changed = true;
      for (const BondRecord& b : graph.bonds) {
        if (b.a == i && alive[b.b]) --degree[b.b];
        if (b.b == i && alive[b.a]) --degree[b.a];
      }
      degree[i] = 0;
    }
  }

  MolGraph out;
  out.source_text = graph.source_text;
  std::vector<std::size_t> remap(n, SIZE_MAX);
  for (std::size_t i = 0; i < n; ++i) {
    if (!alive[i]) continue;
    remap[i] = out.atoms.size();
    out.atoms.push_back(graph.atoms[i]);
  }
  for (const BondRecord& b : graph.bonds) {
    if (alive[b.a] && alive[b.b]) {
      out.bonds.push_back({remap[b.a], remap[b.b], b.order});
    }
  }
  return out;
}

std::string canonical_certificate(const MolGraph& scaffold) {
  return Canonicalizer(scaffold).run();
}

ScaffoldKey canonical_key(const MolGraph& scaffold) {
  ScaffoldKey key;
  key.atom_count = scaffold.atoms.size();
  key.is_empty = scaffold.atoms.empty();
  key.digest = digest128(canonical_certificate(scaffold));
  return key;
}

std::string ScaffoldKey::hex() const {
  static const char* kHex = "0123456789abcdef";
  std::string out;
  out.reserve(32);
  for (std::uint8_t b : digest) {
    out += kHex[b >> 4];
    out += kHex[b & 0xf];
  }
  return out;
}

std::size_t ScaffoldGroups::total_members() const {
  std::size_t total = 0;
  for (const auto& m : members) total += m.size();
  return total;
}

std::size_t ScaffoldGroups::group_of(std::size_t index) const {
  for (std::size_t g = 0; g < members.size(); ++g) {
    for (std::size_t i : members[g]) {
      if (i == index) return g;
    }
  }
  return SIZE_MAX;
}

ScaffoldGroups group_by_scaffold(std::span<const MolGraph> graphs,
                                 std::span<const std::size_t> indices) {
  struct Group {
    ScaffoldKey key;
    std::vector<std::size_t> members;
  };
  std::map<std::array<std::uint8_t, 16>, Group> by_digest;
  for (std::size_t idx : indices) {
    if (idx >= graphs.size()) throw std::out_of_range("group_by_scaffold: index past dataset end");
    const ScaffoldKey key = canonical_key(murcko_scaffold(graphs[idx]));
    auto& group = by_digest[key.digest];
    group.key = key;
    group.members.push_back(idx);
  }
  std::vector<Group> groups;
  groups.reserve(by_digest.size());
  for (auto& [digest, group] : by_digest) {
    (void)digest;
    groups.push_back(std::move(group));
  }
  std::sort(groups.begin(), groups.end(), [](const Group& x, const Group& y) {
    if (x.members.size() != y.members.size()) return x.members.size() > y.members.size();
    return x.key.digest < y.key.digest;
  });
  ScaffoldGroups out;
  for (Group& g : groups) {
    out.keys.push_back(g.key);
    out.members.push_back(std::move(g.members));
  }
  return out;
}

}  // namespace fedchem
