// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>

#include "galore/errors.hpp"
#include "galore/matrix.hpp"

namespace galore {

/// xoshiro256** seeded through splitmix64.
///
/// Every draw is defined purely by integer arithmetic on the 256-bit state,
/// so a given seed produces the same stream on every platform. Normals use
/// the Box-Muller transform; the second variate of each pair is cached.
class Rng {
public:
  explicit Rng(std::uint64_t seed = 0) {
    std::uint64_t sm = seed;
    for (auto &word : s_) {
      word = splitmix64(sm);
    }
  }

  /// Independent stream derived from this generator's seed material.
  Rng fork(std::uint64_t stream) const {
    std::uint64_t mix = s_[0] ^ (stream * 0x9E3779B97F4A7C15ULL);
    return Rng(splitmix64(mix) ^ s_[3]);
  }

  std::uint64_t next_u64() noexcept {
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

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n) by rejection (no modulo bias).
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n == 0) {
      throw ParameterError("uniform_index: empty range");
    }
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  double normal() {
    if (cached_) {
      const double z = *cached_;
      cached_.reset();
      return z;
    }
    const double u1 = 1.0 - uniform(); // (0, 1]
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    cached_ = radius * std::sin(theta);
    return radius * std::cos(theta);
  }

private:
  static std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }

  static std::uint64_t splitmix64(std::uint64_t &x) noexcept {
    std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t s_[4]{};
  std::optional<double> cached_;
};

/// rows x cols matrix of i.i.d. standard normals, filled row-major.
inline Matrix gaussian(Rng &rng, std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) {
    throw ParameterError("gaussian: rows and cols must be >= 1");
  }
  Matrix m(rows, cols);
  for (double &x : m.data()) {
    x = rng.normal();
  }
  return m;
}

} // namespace galore
