#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>

namespace bicomp {

// Which part of an iteration a random stream feeds. Streams are keyed by
// (seed, phase, entity, iteration) so that two runs sharing a seed draw the
// same uplink randomness regardless of what their downlink does.
enum class Phase : std::uint64_t {
  gradient = 1,
  uplink = 2,
  downlink = 3,
  participation = 4,
  data = 5,
  check = 6,
};

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Counter-based generator: the n-th output is a pure function of (key, n).
class Stream {
 public:
  explicit constexpr Stream(std::uint64_t key) noexcept : key_(key) {}

  std::uint64_t next_u64() noexcept {
    ++counter_;
    return mix64(key_ ^ mix64(counter_));
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller; consumes exactly two draws.
  double normal() noexcept {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  bool bernoulli(double p) noexcept { return uniform() < p; }

  /// Uniform integer in [0, n). n must be positive.
  std::size_t below(std::size_t n) noexcept {
    // Lemire's multiply-shift with rejection.
    std::uint64_t x = next_u64();
    __uint128_t m = static_cast<__uint128_t>(x) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
      const std::uint64_t threshold = (0 - static_cast<std::uint64_t>(n)) % n;
      while (low < threshold) {
        x = next_u64();
        m = static_cast<__uint128_t>(x) * n;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::size_t>(m >> 64);
  }

  std::uint64_t draws() const noexcept { return counter_; }
  std::uint64_t key() const noexcept { return key_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

constexpr std::uint64_t stream_key(std::uint64_t seed, Phase phase,
                                   std::uint64_t entity,
                                   std::uint64_t iteration) noexcept {
  std::uint64_t k = mix64(seed ^ 0x5851F42D4C957F2DULL);
  k = mix64(k ^ (static_cast<std::uint64_t>(phase) * 0xD1342543DE82EF95ULL));
  k = mix64(k ^ (entity + 0x2545F4914F6CDD1DULL));
  k = mix64(k ^ (iteration + 0x9FB21C651E98DF25ULL));
  return k;
}

inline Stream make_stream(std::uint64_t seed, Phase phase,
                          std::uint64_t entity = 0,
                          std::uint64_t iteration = 0) noexcept {
  return Stream(stream_key(seed, phase, entity, iteration));
}

}  // namespace bicomp
