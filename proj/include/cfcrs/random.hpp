#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>

namespace cfcrs {

using Rng = std::mt19937_64;

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

// Draws an index with probability proportional to weights (non-negative,
// positive sum).
std::size_t sample_weighted(Rng& rng, std::span<const double> weights);

// Derives an independent stream seed from a base seed and a stream label.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace cfcrs
