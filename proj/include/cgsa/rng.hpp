#pragma once

#include <cstdint>
#include <vector>

namespace cgsa {

// Counter-based deterministic generator (SplitMix64 output function over
// seed + counter). State is just two 64-bit words, so checkpoints can resume
// the exact stream on any platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t counter = 0)
      : seed_(seed), counter_(counter) {}

  std::uint64_t next_u64();

  // Uniform in [0, 1).
  double uniform();
  // Uniform in [lo, hi).
  double uniform(double lo, double hi);
  // Uniform integer in [0, n); n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);
  // Standard normal via Box-Muller; consumes exactly two uniforms.
  double normal();
  double normal(double mean, double stddev);

  std::vector<double> normal_vector(std::size_t n);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }
  void set_counter(std::uint64_t c) { counter_ = c; }

  // Derives an independent stream, e.g. per-scene generators.
  static Rng derive(std::uint64_t seed, std::uint64_t stream);

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

}  // namespace cgsa
