#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace fedchem {

/**
 * Deterministic random source built on std::mt19937_64 (the one standard
 * engine whose output sequence is pinned by the C++ standard). All
 * distributions are implemented here rather than with <random>'s distribution
 * templates, whose output is implementation-defined; results must be
 * bit-reproducible across toolchains.
 */
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

  // Standard normal via the Marsaglia polar method; one spare is cached, so
  // draw order is part of the deterministic contract.
  double normal();

  // Gamma(alpha, 1) via Marsaglia-Tsang, with the power boost for alpha < 1.
  double gamma(double alpha);

  // Dirichlet(alpha, ..., alpha) over k categories: normalized gamma draws.
  std::vector<double> dirichlet(double alpha, std::size_t k);

  // Index draw from an explicit probability vector (CDF scan; the final
  // category absorbs rounding slack).
  std::size_t categorical(const std::vector<double>& probs);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// SplitMix64 step; the workhorse for seed derivation.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/**
 * Derives an independent stream seed from a base seed and an ordered list of
 * tag words (client id, round, purpose...). Order-sensitive: mix_seed(s,{a,b})
 * and mix_seed(s,{b,a}) differ.
 */
inline std::uint64_t mix_seed(std::uint64_t seed,
                              std::initializer_list<std::uint64_t> tags) {
  std::uint64_t state = seed;
  std::uint64_t out = splitmix64(state);
  for (std::uint64_t t : tags) {
    state ^= t + 0x9e3779b97f4a7c15ULL + (out << 6) + (out >> 2);
    out = splitmix64(state);
  }
  return out;
}

}  // namespace fedchem
