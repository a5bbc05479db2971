#include "minv/svd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "minv/errors.hpp"

namespace minv {

namespace {
constexpr double kOffDiagTol = 1e-15;  // relative column-coupling threshold
constexpr int kMaxSweeps = 60;
}  // namespace

ThinSvd thin_svd(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("thin_svd: expected 2-D, got " + a.shape_str());
  const std::size_t m = a.rows(), k = a.cols();
  if (m < k) {
    throw DimensionError("thin_svd: requires rows >= cols, got " + a.shape_str());
  }
  if (!a.all_finite()) throw NumericError("thin_svd: non-finite input");

  // Column-major working copy: rotations touch column pairs.
  std::vector<std::vector<double>> col(k, std::vector<double>(m));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j) col[j][i] = a.at(i, j);
  Tensor v = Tensor::eye(k);

  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < k; ++p) {
      for (std::size_t q = p + 1; q < k; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          alpha += col[p][i] * col[p][i];
          beta += col[q][i] * col[q][i];
          gamma += col[p][i] * col[q][i];
        }
        if (alpha == 0.0 || beta == 0.0) continue;
        if (std::abs(gamma) <= kOffDiagTol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double xp = col[p][i], xq = col[q][i];
          col[p][i] = c * xp - s * xq;
          col[q][i] = s * xp + c * xq;
        }
        for (std::size_t i = 0; i < k; ++i) {
          const double vp = v.at(i, p), vq = v.at(i, q);
          v.at(i, p) = c * vp - s * vq;
          v.at(i, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) break;
  }

  // Singular values = column norms; sort descending.
  std::vector<double> sig(k);
  for (std::size_t j = 0; j < k; ++j) {
    double s2 = 0.0;
    for (std::size_t i = 0; i < m; ++i) s2 += col[j][i] * col[j][i];
    sig[j] = std::sqrt(s2);
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sig[x] > sig[y]; });

  ThinSvd out;
  out.u = Tensor({m, k});
  out.sigma = Tensor({k});
  out.v = Tensor({k, k});
  for (std::size_t jj = 0; jj < k; ++jj) {
    const std::size_t j = order[jj];
    out.sigma[jj] = sig[j];
    for (std::size_t i = 0; i < k; ++i) out.v.at(i, jj) = v.at(i, j);
    if (sig[j] > 0.0) {
      for (std::size_t i = 0; i < m; ++i) out.u.at(i, jj) = col[j][i] / sig[j];
    }
  }
  return out;
}

Tensor svd_reconstruct(const ThinSvd& s) {
  const std::size_t m = s.u.rows(), k = s.u.cols();
  Tensor scaled = s.u;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j) scaled.at(i, j) *= s.sigma[j];
  return matmul(scaled, transpose(s.v));
}

std::vector<double> principal_angles(const Tensor& basis1, const Tensor& basis2) {
  if (basis1.rank() != 2 || basis2.rank() != 2 || basis1.rows() != basis2.rows()) {
    throw DimensionError("principal_angles: bases must be 2-D with equal ambient dimension");
  }
  Tensor cross = matmul(transpose(basis1), basis2);  // [k1, k2]
  if (cross.rows() < cross.cols()) cross = transpose(cross);
  const ThinSvd s = thin_svd(cross);
  std::vector<double> angles(s.sigma.size());
  for (std::size_t i = 0; i < angles.size(); ++i) {
    angles[i] = std::acos(std::clamp(s.sigma[i], 0.0, 1.0));
  }
  std::sort(angles.begin(), angles.end());
  return angles;
}

}  // namespace minv
