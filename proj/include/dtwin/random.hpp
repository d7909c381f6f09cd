#pragma once

#include <cstdint>
#include <random>

namespace dtwin {

// Portable draws from mt19937_64 (std distributions are implementation-defined).
double uniform01(std::mt19937_64& rng);
double standard_normal(std::mt19937_64& rng);
std::size_t uniform_index(std::mt19937_64& rng, std::size_t n);
bool bernoulli(std::mt19937_64& rng, double p);

// Independent child seed for a named sub-stream (splitmix64 mix).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

// Fisher-Yates shuffle using uniform_index.
template <class It>
void shuffle_range(It first, It last, std::mt19937_64& rng) {
  const auto n = static_cast<std::size_t>(last - first);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = uniform_index(rng, i);
    using std::swap;
    swap(first[i - 1], first[j]);
  }
}

}  // namespace dtwin
