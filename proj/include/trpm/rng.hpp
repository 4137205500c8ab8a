#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace trpm {

// Counter-free splittable RNG: xoshiro256** seeded through splitmix64.
// Every Monte Carlo task derives its own stream with fork(), so results
// are reproducible for a given (seed, task-key) regardless of scheduling.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed) {
    std::uint64_t x = seed;
    for (auto& w : s_) w = splitmix64(x);
  }

  // Independent stream keyed off this stream's seed.
  Rng fork(std::uint64_t k1, std::uint64_t k2 = 0, std::uint64_t k3 = 0) const {
    std::uint64_t h = seed_;
    h = mix(h, k1 + 0x9e3779b97f4a7c15ULL);
    h = mix(h, k2 + 0xbf58476d1ce4e5b9ULL);
    h = mix(h, k3 + 0x94d049bb133111ebULL);
    return Rng(h);
  }

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform on [0,1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer on [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_int: n must be positive");
    // Lemire rejection-free-ish bounded draw.
    std::uint64_t x = next_u64();
    __uint128_t m = static_cast<__uint128_t>(x) * n;
    auto lo = static_cast<std::uint64_t>(m);
    if (lo < n) {
      const std::uint64_t t = (0 - n) % n;
      while (lo < t) {
        x = next_u64();
        m = static_cast<__uint128_t>(x) * n;
        lo = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal, Marsaglia polar with a cached spare.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
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
    has_spare_ = true;
    return u * f;
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  double exponential() {
    double u;
    do { u = uniform(); } while (u <= 0.0);
    return -std::log(u);
  }

  // Gamma(shape, scale 1), Marsaglia-Tsang; boost to shape >= 1 for shape < 1.
  double gamma(double shape) {
    if (shape <= 0.0) throw std::invalid_argument("gamma: shape must be positive");
    if (shape < 1.0) {
      double u;
      do { u = uniform(); } while (u <= 0.0);
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
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

  double beta(double a, double b) {
    const double x = gamma(a);
    const double y = gamma(b);
    return x / (x + y);
  }

  double chi_squared(double dof) { return 2.0 * gamma(0.5 * dof); }

  double laplace(double loc, double scale) {
    const double u = uniform() - 0.5;
    return loc - scale * std::copysign(std::log(1.0 - 2.0 * std::fabs(u)), u);
  }

  // Index draw proportional to exp(logw), computed stably in the log domain.
  int categorical_from_log(std::span<const double> logw) {
    if (logw.empty()) throw std::invalid_argument("categorical_from_log: empty weights");
    double mx = -std::numeric_limits<double>::infinity();
    for (double w : logw) mx = std::max(mx, w);
    if (!std::isfinite(mx)) throw std::runtime_error("categorical_from_log: all weights are -inf or NaN");
    double total = 0.0;
    for (double w : logw) total += std::exp(w - mx);
    double u = uniform() * total;
    for (std::size_t j = 0; j + 1 < logw.size(); ++j) {
      u -= std::exp(logw[j] - mx);
      if (u < 0.0) return static_cast<int>(j);
    }
    return static_cast<int>(logw.size()) - 1;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = uniform_int(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  static std::uint64_t splitmix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  static std::uint64_t mix(std::uint64_t h, std::uint64_t k) {
    std::uint64_t x = h ^ (k + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2));
    return splitmix64(x);
  }

  std::uint64_t seed_;
  std::array<std::uint64_t, 4> s_{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace trpm
