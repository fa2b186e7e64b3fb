#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace cbc {

namespace detail {

// SplitMix64 step (Steele, Lea, Flood). Used for state expansion and
// stream derivation only, never as the main generator.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t rotl64(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}

}  // namespace detail

/// Deterministic child seed for nested stream trees (experiment cell ->
/// role -> sample). Same (seed, stream_id) always yields the same value.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream_id) {
  std::uint64_t sm = seed;
  const std::uint64_t a = detail::splitmix64(sm);
  sm = a ^ (stream_id + 0x9e3779b97f4a7c15ULL);
  return detail::splitmix64(sm);
}

/// Deterministic random stream backed by xoshiro256** (Blackman & Vigna),
/// seeded through SplitMix64. Every stochastic step in the project draws
/// from one of these, so a run is reproducible from its seeds alone; no
/// standard-library distribution is involved anywhere.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& word : state_) word = detail::splitmix64(sm);
  }

  /// Independent child stream, e.g. one per experiment cell or per
  /// ensemble sample. Same (seed, stream_id) always yields the same
  /// stream regardless of what other streams were drawn.
  static RandomStream derive(std::uint64_t seed, std::uint64_t stream_id) {
    return RandomStream(derive_seed(seed, stream_id));
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = detail::rotl64(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = detail::rotl64(state_[3], 45);
    return result;
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, n) by rejection.
  std::uint64_t uniform_below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_below: n must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal draw via the Marsaglia polar method (pairs cached).
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
    const double scale = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * scale;
    has_spare_ = true;
    return u * scale;
  }

  double normal(double mean, double stddev) {
    if (stddev < 0.0) throw std::invalid_argument("normal: stddev must be >= 0");
    return mean + stddev * normal();
  }

 private:
  std::uint64_t state_[4] = {};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace cbc
