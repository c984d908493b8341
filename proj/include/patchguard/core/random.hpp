#pragma once

#include <cstdint>
#include <random>

namespace patchguard {

struct RandomSeed {
  std::uint64_t value = 0;
};

/// splitmix64 finalizer; used to derive independent per-stream seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

/// Seeded generator shared by every stochastic component. Sequences are
/// reproducible within one build on one machine.
class Rng {
 public:
  explicit Rng(RandomSeed seed) : engine_(seed.value) {}
  Rng(RandomSeed seed, std::uint64_t stream) : engine_(mix_seed(seed.value, stream)) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  /// Inclusive range.
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
  double normal(double mean = 0.0, double stddev = 1.0) { return std::normal_distribution<double>(mean, stddev)(engine_); }
  /// Normal truncated to ±2 stddev by resampling.
  double truncated_normal(double stddev);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace patchguard
