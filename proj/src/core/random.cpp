#include "patchguard/core/random.hpp"

#include <cmath>

namespace patchguard {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

double Rng::truncated_normal(double stddev) {
  for (;;) {
    const double v = normal();
    if (std::abs(v) <= 2.0) return v * stddev;
  }
}

}  // namespace patchguard
