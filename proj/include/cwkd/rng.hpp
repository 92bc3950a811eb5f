#pragma once

#include <cstdint>
#include <string_view>

namespace cwkd {

/// Counter-based generator: draw k (k = 0, 1, ...) is the SplitMix64 finalizer
/// applied to seed + (k + 1) * 0x9E3779B97F4A7C15. Any draw can be computed from
/// (seed, k) alone, so streams are identical regardless of how work is split.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed) {}

  static std::uint64_t mix(std::uint64_t z);
  /// Draw number `k` of the stream for `seed`, without touching any state.
  static std::uint64_t at(std::uint64_t seed, std::uint64_t k);
  /// Sub-seed for a named purpose: mix(seed ^ fnv1a64(tag)).
  static std::uint64_t derive(std::uint64_t seed, std::string_view tag);

  std::uint64_t next_u64() { return at(seed_, counter_++); }
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller; consumes exactly two draws.
  double normal();
  /// Uniform integer in [0, bound); bound must be positive.
  std::uint64_t below(std::uint64_t bound);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

}  // namespace cwkd
