// SPDX-License-Identifier: Apache-2.0
//
// Counter-based pseudo-random generator built on SplitMix64 (Steele et al.,
// "Fast splittable pseudorandom number generators", OOPSLA 2014). Each
// (seed, stream) pair yields an independent deterministic sequence, so data
// loading and mask sampling reproduce bit-identically regardless of worker
// layout.

#pragma once

#include <cmath>
#include <cstdint>

namespace lsmae {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace detail

class CounterRng {
 public:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
      : key_(detail::splitmix64(seed + kGolden) ^
             detail::splitmix64(stream * kGolden + 0x6A09E667F3BCC909ULL)) {}

  // Combine identifiers (e.g. epoch and sample index) into one stream id.
  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    return detail::splitmix64(a + kGolden) ^ detail::splitmix64(b ^ kGolden);
  }

  std::uint64_t next_u64() {
    counter_ += kGolden;
    return detail::splitmix64(key_ ^ counter_);
  }

  // Uniform in [0, 1) with 53 random bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  float next_float() { return static_cast<float>(next_double()); }

  // Uniform in [0, n), unbiased via rejection.
  std::uint64_t next_below(std::uint64_t n) {
    const std::uint64_t limit = ~0ULL - ~0ULL % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  // Standard normal via Box-Muller; the paired draw is cached.
  double next_normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    const double u1 = 1.0 - next_double();  // (0, 1], keeps log finite
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(theta);
    have_cached_ = true;
    return r * std::cos(theta);
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

}  // namespace lsmae
