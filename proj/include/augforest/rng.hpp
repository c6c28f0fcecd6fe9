#pragma once

#include <cstdint>
#include <random>

namespace augforest {

/**
 * Deterministic seed derivation.
 *
 * All stochastic components take an explicit uint64 seed and derive
 * independent substreams with mix(); nothing reads global state, so a run is
 * reproducible from its config seed alone.
 */
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives the substream `stream` of `seed`. mix(s, a) and mix(s, b) are
// decorrelated for a != b.
inline std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream));
}

inline std::uint64_t mix(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return mix(mix(seed, a), b);
}

inline std::mt19937_64 make_engine(std::uint64_t seed) {
  return std::mt19937_64(splitmix64(seed));
}

}  // namespace augforest
