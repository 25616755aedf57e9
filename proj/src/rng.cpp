#include "fedchem/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace fedchem {

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
  // Reject draws past the largest multiple of n to avoid modulo bias.
  const std::uint64_t rem = (UINT64_MAX % n + 1) % n;
  const std::uint64_t limit = UINT64_MAX - rem;
  for (;;) {
    const std::uint64_t r = eng_();
    if (r <= limit) return r % n;
  }
}

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double f = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * f;
  have_spare_ = true;
  return u * f;
}

double Rng::gamma(double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("Rng::gamma: alpha must be positive");
  if (alpha < 1.0) {
    // Boost: Gamma(a) = Gamma(a+1) * U^(1/a).
    double u = uniform();
    while (u == 0.0) u = uniform();
    return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
  }
  const double d = alpha - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

std::vector<double> Rng::dirichlet(double alpha, std::size_t k) {
  std::vector<double> out(k);
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    out[i] = gamma(alpha);
    total += out[i];
  }
  if (total <= 0.0) {
    // All draws underflowed; fall back to the uniform simplex point.
    for (double& x : out) x = 1.0 / static_cast<double>(k);
    return out;
  }
  for (double& x : out) x /= total;
  return out;
}

std::size_t Rng::categorical(const std::vector<double>& probs) {
  if (probs.empty()) throw std::invalid_argument("Rng::categorical: empty probability vector");
  const double u = uniform();
  double cum = 0.0;
  for (std::size_t i = 0; i + 1 < probs.size(); ++i) {
    cum += probs[i];
    if (u < cum) return i;
  }
  return probs.size() - 1;
}

}  // namespace fedchem
