#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace weakenlab {

/// Seedable, splittable random stream. Every consumer of randomness takes one
/// of these explicitly; there is no global generator.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }

  // Independent child stream, a pure function of (seed, stream).
  Rng split(std::uint64_t stream) const;

  double uniform();  // [0, 1)
  double uniform(double lo, double hi);
  std::size_t uniform_index(std::size_t n);  // [0, n)
  double normal(double mean, double stddev);
  double beta(double a, double b);
  std::vector<std::size_t> permutation(std::size_t n);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace weakenlab
