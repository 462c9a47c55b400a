#pragma once

#include <cstdint>
#include <random>

namespace ttw {

/// SplitMix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seeded random source owned by a single worker.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(mix64(seed)) {}

  std::uint64_t seed() const { return seed_; }

  /// Uniform integer in [0, n).
  int uniform_int(int n) {
    std::uniform_int_distribution<int> dist(0, n - 1);
    return dist(engine_);
  }

  double uniform01() {
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    return dist(engine_);
  }

  double uniform(double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    return dist(engine_);
  }

  double normal(double mean, double stddev) {
    std::normal_distribution<double> dist(mean, stddev);
    return dist(engine_);
  }

  bool bernoulli(double p) { return uniform01() < p; }

  /// Independent child stream; the parent state is untouched.
  Rng fork(std::uint64_t stream) const { return Rng(mix64(seed_ ^ mix64(stream + 1))); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace ttw
