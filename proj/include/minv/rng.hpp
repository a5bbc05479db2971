#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "minv/tensor.hpp"

namespace minv {

// Deterministic random source.  Uniform doubles and the Box-Muller gaussian
// are implemented here (rather than via std::*_distribution) so that streams
// are bit-identical across standard libraries, which the reproducibility
// guarantees lean on.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  // splitmix64-style mixing; used to derive decorrelated child seeds from
  // (seed, tag) pairs such as (run seed, class index).
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t tag);
  Rng child(std::uint64_t tag) const { return Rng(mix(seed_, tag)); }
  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::size_t index(std::size_t n);

  double gaussian();  // standard normal, Box-Muller
  Tensor gaussian_vector(std::size_t n, double sigma = 1.0);
  Tensor gaussian_matrix(std::size_t r, std::size_t c, double sigma = 1.0);
  // Uniformly distributed point on the unit sphere in R^n.
  Tensor unit_vector(std::size_t n);

  // Fisher-Yates permutation of {0..n-1}.
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace minv
