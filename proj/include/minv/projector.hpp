#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "minv/tensor.hpp"

namespace minv {

// Orthogonal projector onto a k-dimensional tangent subspace of R^d, stored
// as its orthonormal basis (never as the d x d matrix).  `singular_values`
// carries the spectrum of the Jacobian the basis came from; it lets the
// unnormalized pushforward J J^T be reapplied later and feeds diagnostics.
// Hand-built projectors may leave it as all-ones.
struct Projector {
  std::size_t ambient_dim = 0;
  std::size_t intrinsic_dim = 0;
  Tensor basis;            // [d, k], orthonormal columns
  Tensor anchor;           // [d]
  Tensor singular_values;  // [k]
};

// Relative rank tolerance: singular values at or below tol * sigma_max count
// as zero.
inline constexpr double kRankRelTol = 1e-10;

// Basis vectors must satisfy B^T B = I to this absolute tolerance.
inline constexpr double kOrthonormalTol = 1e-10;

// Construct a projector from a full-column-rank map Jacobian (thin SVD of
// jac, basis = left singular vectors).  Rank deficiency raises a
// DegenerateError whose message lists the singular-value spectrum.
Projector tangent_projector(const Tensor& jac, const Tensor& anchor,
                            double rank_tol = kRankRelTol);

Projector projector_from_basis(Tensor basis, Tensor anchor);

// B (B^T v): the orthogonal projection of v onto the subspace.
Tensor project(const Projector& p, const Tensor& v);

// J (J^T grad): the unnormalized pushforward of the pulled-back gradient.
Tensor unnormalized_push(const Tensor& jac, const Tensor& grad);

// As above, but reconstructed from a stored projector: U diag(sigma^2) U^T v.
Tensor unnormalized_push(const Projector& p, const Tensor& v);

// ||P v|| / ||v||, clamped into [0, 1].  Zero v raises a DegenerateError.
double alignment_score(const Projector& p, const Tensor& v);

struct BaselinePair {
  double analytic;        // sqrt(k/d)
  double empirical_mean;  // mean score of isotropic unit vectors vs. a
                          // k-coordinate projector
};
BaselinePair random_baseline(std::size_t intrinsic_dim, std::size_t ambient_dim,
                             std::size_t samples, std::uint64_t seed);

nlohmann::json projector_to_json(const Projector& p);
// Validates orthonormality on load (ParseError otherwise).
Projector projector_from_json(const nlohmann::json& j);

}  // namespace minv
