#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace minv {

// Dense row-major tensor of doubles.  Rank is almost always 1 or 2 here;
// anything heavier than that is outside this project's scale.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);  // zero-filled
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
  static Tensor ones(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double v);
  // Identity matrix.
  static Tensor eye(std::size_t n);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  // 2-D accessors; throw DimensionError when the rank does not match.
  std::size_t rows() const;
  std::size_t cols() const;

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c);
  double at(std::size_t r, std::size_t c) const;

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool all_finite() const;
  double norm() const;       // Euclidean norm over all entries
  double sum() const;
  double min_value() const;  // error on empty
  double max_value() const;

  std::string shape_str() const;  // e.g. "[3, 4]"

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

// Plain (non-autodiff) linear algebra on tensors; used by the SVD, the
// projector ops and anywhere a value-only computation is enough.
Tensor matmul(const Tensor& a, const Tensor& b);  // [m,n]x[n,p] or [m,n]x[n]
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
double dot(const Tensor& a, const Tensor& b);

}  // namespace minv
