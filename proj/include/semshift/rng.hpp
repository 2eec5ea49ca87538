#ifndef SEMSHIFT_RNG_HPP
#define SEMSHIFT_RNG_HPP

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace semshift {

// Seed/stream derivation and sampling are implemented here rather than on
// top of <random> so that selections are reproducible for a given build
// regardless of standard-library version. Reproducibility across different
// implementations of this toolkit is explicitly not promised; golden files
// pin selections per implementation.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent sub-seed from a base seed and a list of stream
/// labels (arm id, threshold index, draw index, block index, ...). Each
/// label is folded through splitmix64 so sibling streams do not overlap.
inline std::uint64_t derive_seed(std::uint64_t seed,
                                 std::initializer_list<std::uint64_t> parts) {
  std::uint64_t s = splitmix64(seed);
  for (std::uint64_t p : parts) {
    s = splitmix64(s ^ splitmix64(p + 0x9e3779b97f4a7c15ULL));
  }
  return s;
}

// Stream labels used by the library when deriving sub-seeds.
inline constexpr std::uint64_t kStreamRandomBaseline = 1;
inline constexpr std::uint64_t kStreamTopicDraw = 2;
inline constexpr std::uint64_t kStreamCosineSubsample = 3;
inline constexpr std::uint64_t kStreamGenerateBlock = 4;

/// xoshiro256** by Blackman & Vigna (public domain), seeded via splitmix64.
class Xoshiro256 {
 public:
  explicit Xoshiro256(std::uint64_t seed) {
    std::uint64_t s = seed;
    for (auto& word : state_) {
      s = splitmix64(s);
      word = s;
    }
  }

  std::uint64_t next() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n) without modulo bias (rejection sampling).
  std::uint64_t bounded(std::uint64_t n) {
    if (n == 0) return 0;
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = next();
      if (r >= threshold) return r % n;
    }
  }

  /// Standard normal via Box-Muller; caches the second deviate.
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    cached_ = r * std::sin(theta);
    have_cached_ = true;
    return r * std::cos(theta);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t state_[4];
  double cached_ = 0.0;
  bool have_cached_ = false;
};

}  // namespace semshift

#endif  // SEMSHIFT_RNG_HPP
