#pragma once

#include <cstdint>

namespace rerand {

// Counter-based generator built on the SplitMix64 finalizer.
//
// Output i of a stream is mix64(key + (i + 1) * 0x9E3779B97F4A7C15), so a
// stream is fully described by its 64-bit key and position. Keys for
// (seed, stream) pairs and for nested substreams are derived by hashing,
// which gives every parallel work chunk its own reproducible sequence
// independent of thread scheduling. All derived variates (uniform, normal,
// gamma) are produced by code in this library, never by <random>
// distributions, so results do not depend on the standard library vendor.
inline std::uint64_t mix64(std::uint64_t x) noexcept {
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBULL;
  x ^= x >> 31;
  return x;
}

class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept;

  // Independent child stream; the parent's position is not consulted.
  CounterRng substream(std::uint64_t index) const noexcept;

  std::uint64_t next() noexcept {
    ++counter_;
    return mix64(key_ + counter_ * 0x9E3779B97F4A7C15ULL);
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept;
  // Uniform on (0, 1).
  double uniform_open() noexcept;
  // Exactly uniform integer on [0, bound); bound must be positive.
  std::uint64_t below(std::uint64_t bound) noexcept {
    // Lemire's multiply-shift with rejection of the biased low region.
    __uint128_t m = static_cast<__uint128_t>(next()) * bound;
    if (static_cast<std::uint64_t>(m) < bound) [[unlikely]] {
      const std::uint64_t threshold = (0 - bound) % bound;
      while (static_cast<std::uint64_t>(m) < threshold) m = static_cast<__uint128_t>(next()) * bound;
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  // Standard Gaussian (Marsaglia polar method, spare value cached).
  double normal() noexcept;
  // Gamma(shape, 1) via Marsaglia-Tsang; shape > 0.
  double gamma(double shape) noexcept;

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t position() const noexcept { return counter_; }

 private:
  CounterRng(std::uint64_t key, std::uint64_t counter, int) noexcept : key_(key), counter_(counter) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace rerand
