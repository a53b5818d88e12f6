#pragma once

// Counter-based random numbers: every draw is a pure function of a key, so
// streams are reproducible regardless of evaluation order or thread count.

#include <cmath>
#include <cstdint>
#include <numbers>

namespace schlab {

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept
{
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t hash_key(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                                 std::uint64_t c = 0) noexcept
{
  std::uint64_t h = mix64(seed ^ 0x5851F42D4C957F2DULL);
  h = mix64(h ^ a);
  h = mix64(h ^ (b + 0x632BE59BD9B4E019ULL));
  return mix64(h ^ (c * 0x9E3779B97F4A7C15ULL + 0x2545F4914F6CDD1DULL));
}

/// Uniform in the open interval (0, 1).
constexpr double to_unit_open(std::uint64_t h) noexcept
{
  return (static_cast<double>(h >> 11) + 0.5) * 0x1.0p-53;
}

/// Stateless generator: draws are indexed by (stream, index, sub).
class CounterRng {
 public:
  explicit constexpr CounterRng(std::uint64_t seed) noexcept : seed_(seed) {}

  [[nodiscard]] constexpr std::uint64_t seed() const noexcept { return seed_; }

  [[nodiscard]] double uniform(std::uint64_t stream, std::uint64_t index,
                               std::uint64_t sub = 0) const noexcept
  {
    return to_unit_open(hash_key(seed_, stream, index, 2 * sub));
  }

  /// Standard normal via Box-Muller on two independent hashed uniforms.
  [[nodiscard]] double normal(std::uint64_t stream, std::uint64_t index,
                              std::uint64_t sub = 0) const noexcept
  {
    const double u1 = to_unit_open(hash_key(seed_, stream, index, 2 * sub));
    const double u2 = to_unit_open(hash_key(seed_, stream, index, 2 * sub + 1));
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Independent child generator (path-level sub-seeds).
  [[nodiscard]] constexpr CounterRng split(std::uint64_t child) const noexcept
  {
    return CounterRng(mix64(seed_ ^ mix64(child + 0xD1B54A32D192ED03ULL)));
  }

 private:
  std::uint64_t seed_;
};

}  // namespace schlab
