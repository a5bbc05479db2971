#pragma once

#include <vector>

#include "minv/tensor.hpp"

namespace minv {

// Thin SVD a = u * diag(sigma) * v^T for an m x k matrix with m >= k.
// Computed by one-sided Jacobi (Hestenes): plane rotations on the right
// orthogonalize the columns; column norms become the singular values.
// Columns whose singular value is exactly zero get a zero u column.
struct ThinSvd {
  Tensor u;      // [m, k]
  Tensor sigma;  // [k], descending, >= 0
  Tensor v;      // [k, k]
};

ThinSvd thin_svd(const Tensor& a);

Tensor svd_reconstruct(const ThinSvd& s);  // u * diag(sigma) * v^T

// Principal angles (radians, ascending) between the column spans of two
// orthonormal bases with the same ambient dimension.
std::vector<double> principal_angles(const Tensor& basis1, const Tensor& basis2);

}  // namespace minv
