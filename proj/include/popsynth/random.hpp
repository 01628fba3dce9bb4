#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace popsynth {

/// Stable 64-bit seed derivation: the same (seed, tags...) always yields the same
/// stream regardless of platform, thread count or evaluation order.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::string_view sub);

/// Seeded random stream. Uniform and normal draws are computed from raw 64-bit
/// engine output so results do not depend on the standard library's distribution
/// implementations.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on the open interval (0, 1).
  double uniform();
  double standard_normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

 private:
  std::mt19937_64 engine_;
};

}  // namespace popsynth
