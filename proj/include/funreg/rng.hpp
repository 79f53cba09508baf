#pragma once

#include <cstdint>
#include <vector>

namespace funreg {

// Deterministic random stream (xoshiro256++ seeded through splitmix64).
// All distribution transforms are implemented here rather than with
// std::*_distribution so that a given (seed, index) pair produces the same
// sequence on every standard library.  Resampling code derives one stream
// per replicate with substream(seed, replicate_index); streams with distinct
// indices are statistically independent for practical purposes.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  static Rng substream(std::uint64_t seed, std::uint64_t index);

  std::uint64_t next_u64();

  // Uniform on [0, 1) with 53 random bits.
  double uniform01();

  // Standard normal (Box-Muller, pairwise with one cached value).
  double normal();

  // Uniform integer in {0, ..., n-1}, unbiased (rejection sampling).
  std::uint64_t uniform_below(std::uint64_t n);

  // Fisher-Yates shuffle of 0..n-1.
  std::vector<int> permutation(int n);

 private:
  std::uint64_t state_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace funreg
