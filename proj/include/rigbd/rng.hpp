#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace rigbd {

/// SplitMix64 finalizer. Bijective on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Counter-based generator: a pure function of (key, counters).
///
/// Edge-drop decisions are keyed by (seed, iteration, edge index) so a
/// perturbation does not depend on evaluation order or thread layout.
class CounterRng {
 public:
  explicit constexpr CounterRng(std::uint64_t seed) noexcept : key_(mix64(seed)) {}

  constexpr std::uint64_t bits(std::uint64_t stream, std::uint64_t counter) const noexcept {
    return mix64(mix64(key_ ^ mix64(stream + 0x632be59bd9b4e019ULL)) ^ counter);
  }

  /// Uniform in [0, 1) with 53 bits of resolution.
  constexpr double uniform(std::uint64_t stream, std::uint64_t counter) const noexcept {
    return static_cast<double>(bits(stream, counter) >> 11) * 0x1.0p-53;
  }

 private:
  std::uint64_t key_;
};

/// Derives an independent child seed for a named stage of a pipeline.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return mix64(seed ^ mix64(h));
}

using Engine = std::mt19937_64;

}  // namespace rigbd
