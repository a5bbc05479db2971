#include "minv/projector.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "minv/errors.hpp"
#include "minv/rng.hpp"
#include "minv/svd.hpp"

namespace minv {

namespace {

std::string spectrum_string(const Tensor& sigma) {
  std::string s = "[";
  char buf[32];
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.3e", sigma[i]);
    if (i) s += ", ";
    s += buf;
  }
  return s + "]";
}

void check_orthonormal(const Tensor& basis, const char* who) {
  const Tensor gram = matmul(transpose(basis), basis);
  const std::size_t k = gram.rows();
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const double want = i == j ? 1.0 : 0.0;
      if (std::abs(gram.at(i, j) - want) > kOrthonormalTol) {
        throw ParseError(std::string(who) + ": basis columns are not orthonormal (B^T B deviates by " +
                         std::to_string(std::abs(gram.at(i, j) - want)) + " at entry " +
                         std::to_string(i) + "," + std::to_string(j) + ")");
      }
    }
  }
}

}  // namespace

Projector tangent_projector(const Tensor& jac, const Tensor& anchor, double rank_tol) {
  if (jac.rank() != 2) throw DimensionError("tangent_projector: jacobian must be 2-D");
  const std::size_t d = jac.rows(), k = jac.cols();
  if (k == 0 || d < k) {
    throw DimensionError("tangent_projector: need d >= k >= 1, got " + jac.shape_str());
  }
  if (anchor.size() != d) {
    throw DimensionError("tangent_projector: anchor " + anchor.shape_str() +
                         " does not match ambient dim " + std::to_string(d));
  }
  const ThinSvd s = thin_svd(jac);
  const double smax = s.sigma[0];
  if (smax == 0.0 || s.sigma[k - 1] <= rank_tol * smax) {
    throw DegenerateError("tangent_projector: rank-deficient jacobian, spectrum " +
                          spectrum_string(s.sigma));
  }
  Projector p;
  p.ambient_dim = d;
  p.intrinsic_dim = k;
  p.basis = s.u;
  p.anchor = anchor;
  p.singular_values = s.sigma;
  return p;
}

Projector projector_from_basis(Tensor basis, Tensor anchor) {
  if (basis.rank() != 2) throw DimensionError("projector_from_basis: basis must be 2-D");
  Projector p;
  p.ambient_dim = basis.rows();
  p.intrinsic_dim = basis.cols();
  p.singular_values = Tensor::ones({p.intrinsic_dim});
  p.basis = std::move(basis);
  if (anchor.size() == 0) anchor = Tensor({p.ambient_dim});
  if (anchor.size() != p.ambient_dim) {
    throw DimensionError("projector_from_basis: anchor dim mismatch");
  }
  p.anchor = std::move(anchor);
  check_orthonormal(p.basis, "projector_from_basis");
  return p;
}

Tensor project(const Projector& p, const Tensor& v) {
  if (v.size() != p.ambient_dim) {
    throw DimensionError("project: vector " + v.shape_str() + " vs ambient dim " +
                         std::to_string(p.ambient_dim));
  }
  return matmul(p.basis, matmul(transpose(p.basis), v));
}

Tensor unnormalized_push(const Tensor& jac, const Tensor& grad) {
  if (jac.rank() != 2 || jac.rows() != grad.size()) {
    throw DimensionError("unnormalized_push: jacobian " + jac.shape_str() + " vs grad " +
                         grad.shape_str());
  }
  return matmul(jac, matmul(transpose(jac), grad));
}

Tensor unnormalized_push(const Projector& p, const Tensor& v) {
  Tensor coeff = matmul(transpose(p.basis), v);  // [k]
  for (std::size_t i = 0; i < coeff.size(); ++i) {
    coeff[i] *= p.singular_values[i] * p.singular_values[i];
  }
  return matmul(p.basis, coeff);
}

double alignment_score(const Projector& p, const Tensor& v) {
  const double nv = v.norm();
  if (nv == 0.0) throw DegenerateError("alignment_score: zero gradient (score undefined)");
  const double np = project(p, v).norm();
  return std::min(np / nv, 1.0);
}

BaselinePair random_baseline(std::size_t intrinsic_dim, std::size_t ambient_dim,
                             std::size_t samples, std::uint64_t seed) {
  if (intrinsic_dim == 0 || intrinsic_dim > ambient_dim) {
    throw DimensionError("random_baseline: need 1 <= k <= d");
  }
  BaselinePair out;
  out.analytic = std::sqrt(static_cast<double>(intrinsic_dim) / static_cast<double>(ambient_dim));
  Rng rng(seed);
  double acc = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    const Tensor v = rng.unit_vector(ambient_dim);
    double head2 = 0.0, all2 = 0.0;
    for (std::size_t i = 0; i < ambient_dim; ++i) {
      const double vi2 = v[i] * v[i];
      if (i < intrinsic_dim) head2 += vi2;
      all2 += vi2;
    }
    acc += std::sqrt(head2) / std::sqrt(all2);
  }
  out.empirical_mean = acc / static_cast<double>(samples);
  return out;
}

nlohmann::json projector_to_json(const Projector& p) {
  return {{"ambient_dim", p.ambient_dim},
          {"intrinsic_dim", p.intrinsic_dim},
          {"anchor", p.anchor.data()},
          {"basis", p.basis.data()},  // row-major [d, k]
          {"singular_values", p.singular_values.data()}};
}

Projector projector_from_json(const nlohmann::json& j) {
  for (const char* field : {"ambient_dim", "intrinsic_dim", "anchor", "basis", "singular_values"}) {
    if (!j.contains(field)) {
      throw ParseError(std::string("projector missing field '") + field + "'");
    }
  }
  Projector p;
  p.ambient_dim = j.at("ambient_dim").get<std::size_t>();
  p.intrinsic_dim = j.at("intrinsic_dim").get<std::size_t>();
  p.anchor = Tensor({p.ambient_dim}, j.at("anchor").get<std::vector<double>>());
  p.basis = Tensor({p.ambient_dim, p.intrinsic_dim}, j.at("basis").get<std::vector<double>>());
  p.singular_values =
      Tensor({p.intrinsic_dim}, j.at("singular_values").get<std::vector<double>>());
  check_orthonormal(p.basis, "projector_from_json");
  return p;
}

}  // namespace minv
