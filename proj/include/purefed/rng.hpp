#pragma once

// Deterministic random primitives. The engine is std::mt19937_64 (bit-exact
// per the standard); every distribution transform is written out here because
// the std:: distribution objects are implementation-defined and this project
// guarantees bit-identical runs for identical seeds on any toolchain.

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace purefed::rng {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derives an independent stream seed from a base seed and a tag.
inline std::uint64_t derive(std::uint64_t base, std::uint64_t tag) {
  std::uint64_t s = base ^ (0x632be59bd9b4e019ULL * (tag + 1));
  std::uint64_t h = splitmix64(s);
  return splitmix64(s) ^ h;
}

inline std::uint64_t derive(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  return derive(derive(base, a), b);
}

inline std::uint64_t derive(std::uint64_t base, std::uint64_t a, std::uint64_t b,
                            std::uint64_t c) {
  return derive(derive(derive(base, a), b), c);
}

class Engine {
 public:
  explicit Engine(std::uint64_t seed) : eng_(seed) {}

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  /// Unbiased uniform integer in [0, n) via rejection sampling.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("rng: below(0)");
    const std::uint64_t threshold = (0 - n) % n;  // 2^64 mod n
    for (;;) {
      const std::uint64_t r = eng_();
      if (r >= threshold) return r % n;
    }
  }

  /// Standard normal via Box-Muller (cosine branch only).
  double normal() {
    double u1 = uniform01();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  /// Gamma(alpha, 1) via Marsaglia-Tsang; alpha < 1 boosted through alpha+1.
  double gamma(double alpha) {
    if (!(alpha > 0.0)) throw std::invalid_argument("rng: gamma alpha <= 0");
    if (alpha < 1.0) {
      double u = uniform01();
      if (u <= 0.0) u = 0x1.0p-53;
      return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
    }
    const double d = alpha - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x;
      double v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform01();
      const double x2 = x * x;
      if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
      if (u > 0.0 && std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  /// Symmetric Dirichlet(alpha) over k components.
  std::vector<double> dirichlet(double alpha, int k) {
    if (k < 1) throw std::invalid_argument("rng: dirichlet k < 1");
    std::vector<double> w(static_cast<std::size_t>(k));
    double sum = 0.0;
    for (auto& wi : w) {
      wi = gamma(alpha);
      sum += wi;
    }
    if (sum <= 0.0) {
      // all draws underflowed (extreme alpha); fall back to a single atom
      const std::size_t j = static_cast<std::size_t>(below(static_cast<std::uint64_t>(k)));
      for (auto& wi : w) wi = 0.0;
      w[j] = 1.0;
      return w;
    }
    for (auto& wi : w) wi /= sum;
    return w;
  }

  /// In-place Fisher-Yates shuffle.
  void shuffle(std::vector<int>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static constexpr double kPi = 3.14159265358979323846;
  std::mt19937_64 eng_;
};

}  // namespace purefed::rng
