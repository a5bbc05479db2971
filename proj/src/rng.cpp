#include "minv/rng.hpp"

#include <cmath>

namespace minv {

std::uint64_t Rng::mix(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

double Rng::uniform() {
  // 53 high bits -> double in [0, 1)
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::size_t Rng::index(std::size_t n) {
  // Desk-scale n; modulo bias over 2^64 is negligible here.
  return static_cast<std::size_t>(engine_() % static_cast<std::uint64_t>(n));
}

double Rng::gaussian() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * M_PI * u2;
  spare_ = r * std::sin(a);
  have_spare_ = true;
  return r * std::cos(a);
}

Tensor Rng::gaussian_vector(std::size_t n, double sigma) {
  Tensor t({n});
  for (std::size_t i = 0; i < n; ++i) t[i] = sigma * gaussian();
  return t;
}

Tensor Rng::gaussian_matrix(std::size_t r, std::size_t c, double sigma) {
  Tensor t({r, c});
  for (double& v : t.data()) v = sigma * gaussian();
  return t;
}

Tensor Rng::unit_vector(std::size_t n) {
  Tensor v = gaussian_vector(n);
  double nv = v.norm();
  while (nv == 0.0) {  // astronomically unlikely; loop for correctness
    v = gaussian_vector(n);
    nv = v.norm();
  }
  for (double& x : v.data()) x /= nv;
  return v;
}

std::vector<std::size_t> Rng::permutation(std::size_t n) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = index(i);
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

}  // namespace minv
