#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace cdcm {

// ============================================================================
// Counter-style splittable RNG
// ============================================================================
// SplitMix64 streams keyed by (seed, stream_id). Streams are independent, so
// adding a consumer (e.g. another ROI) never perturbs draws of existing ones,
// and every sequence is reproducible bit-for-bit from its key.

namespace detail {
inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

inline constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}
}  // namespace detail

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(detail::mix64(seed + detail::kGolden)) {}

  /// Independent stream derived from (seed, stream_id).
  static Rng stream(std::uint64_t seed, std::uint64_t stream_id) {
    Rng r(seed);
    r.state_ ^= detail::mix64(stream_id * detail::kGolden + 0x1ull);
    return r;
  }

  std::uint64_t next_u64() {
    state_ += detail::kGolden;
    return detail::mix64(state_);
  }

  /// Uniform on (0, 1).
  double uniform() {
    double u = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    return u > 0.0 ? u : 0x1.0p-53;
  }

  /// Standard normal via Box-Muller (cosine branch only; stateless pairs).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Uniform integer in [0, n).
  std::uint64_t uniform_below(std::uint64_t n) { return next_u64() % n; }

  double exponential(double rate) { return -std::log(uniform()) / rate; }

 private:
  std::uint64_t state_;
};

}  // namespace cdcm
