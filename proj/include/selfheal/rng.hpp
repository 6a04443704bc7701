#pragma once

// Seeded random streams that are bit-identical on every platform.
//
// std::mt19937_64 is fully specified by the standard, but the std::*_distribution
// adaptors are not, so uniform and normal draws are derived here by hand.

#include <cmath>
#include <cstdint>
#include <random>

#include "selfheal/numerics.hpp"

namespace selfheal {

/// splitmix64 finalizer; mixes a seed with a worker or trial index.
inline std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  static constexpr const char* algorithm() { return "mt19937_64"; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : engine_() % n; }

  /// Standard normal via Box-Muller (both outputs used).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * M_PI * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  Vec64 normal_vec(std::size_t n) {
    Vec64 v(n);
    for (auto& x : v) x = normal();
    return v;
  }

  Vec64 unit_vec(std::size_t n) {
    Vec64 v = normal_vec(n);
    double len = norm2(v);
    while (len == 0.0) {
      v = normal_vec(n);
      len = norm2(v);
    }
    v *= 1.0 / len;
    return v;
  }

  Mat64 normal_mat(std::size_t rows, std::size_t cols, double scale = 1.0) {
    Mat64 m(rows, cols);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) m(r, c) = scale * normal();
    return m;
  }

  /// Haar-ish random orthogonal matrix (Gram-Schmidt of a Gaussian matrix).
  Mat64 orthogonal(std::size_t n) { return orthonormalize_columns(normal_mat(n, n)); }

  /// d x r matrix with orthonormal columns.
  Mat64 orthonormal_basis(std::size_t d, std::size_t r) {
    return orthonormalize_columns(normal_mat(d, r));
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace selfheal
