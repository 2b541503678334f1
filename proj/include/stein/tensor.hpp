#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace stein {

/// Dense row-major f64 tensor of rank 1 or 2. All training state, particles
/// and gradients in this library are Tensors.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_.assign(t.count(), 0.0);
    return t;
  }

  static Tensor full(std::vector<std::size_t> shape, double v) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  /// Construction from external input: rejects NaN/Inf entries.
  static Tensor from_data(std::vector<std::size_t> shape, std::vector<double> data) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    if (t.count() != t.data_.size())
      throw std::invalid_argument("Tensor: shape/product mismatch with data length");
    for (double v : t.data_)
      if (!std::isfinite(v)) throw std::invalid_argument("Tensor: non-finite entry");
    return t;
  }

  /// Internal factory, no finiteness scan (computed values).
  static Tensor wrap(std::vector<std::size_t> shape, std::vector<double> data) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    if (t.count() != t.data_.size())
      throw std::invalid_argument("Tensor: shape/product mismatch with data length");
    return t;
  }

  static Tensor vec(std::vector<double> data) {
    std::size_t n = data.size();
    return from_data({n}, std::move(data));
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t rows() const { return rank() == 2 ? shape_[0] : (rank() == 1 ? 1 : 0); }
  std::size_t cols() const { return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : 0); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols(), cols()};
  }
  void set_row(std::size_t r, std::span<const double> v) {
    std::copy(v.begin(), v.end(), data_.begin() + static_cast<std::ptrdiff_t>(r * cols()));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  double sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }
  double max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
  }
  double norm() const {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return std::sqrt(s);
  }

  Tensor& operator+=(const Tensor& o) {
    check_same(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    check_same(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Tensor& operator*=(double c) {
    for (double& v : data_) v *= c;
    return *this;
  }

  friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
  friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
  friend Tensor operator*(Tensor a, double c) { return a *= c; }
  friend Tensor operator*(double c, Tensor a) { return a *= c; }

  friend Tensor hadamard(Tensor a, const Tensor& b) {
    a.check_same(b);
    for (std::size_t i = 0; i < a.data_.size(); ++i) a.data_[i] *= b.data_[i];
    return a;
  }

 private:
  std::size_t count() const {
    std::size_t n = 1;
    for (std::size_t d : shape_) n *= d;
    return shape_.empty() ? 0 : n;
  }
  void check_same(const Tensor& o) const {
    if (!same_shape(o)) throw std::invalid_argument("Tensor: shape mismatch");
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

namespace detail {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

inline ConstMatMap as_matrix(const Tensor& t) {
  return ConstMatMap(t.data(), static_cast<Eigen::Index>(t.rows()),
                     static_cast<Eigen::Index>(t.cols()));
}
inline MatMap as_matrix(Tensor& t) {
  return MatMap(t.data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}
}  // namespace detail

/// C[n×m] = A[n×k] · B[k×m]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  Tensor c = Tensor::zeros({a.rows(), b.cols()});
  detail::as_matrix(c).noalias() = detail::as_matrix(a) * detail::as_matrix(b);
  return c;
}

/// C[n×m] = Aᵀ[n×k] · B[k×m] with A stored [k×n]
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("matmul_tn: dimension mismatch");
  Tensor c = Tensor::zeros({a.cols(), b.cols()});
  detail::as_matrix(c).noalias() = detail::as_matrix(a).transpose() * detail::as_matrix(b);
  return c;
}

/// C[n×m] = A[n×k] · Bᵀ[k×m] with B stored [m×k]
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: dimension mismatch");
  Tensor c = Tensor::zeros({a.rows(), b.rows()});
  detail::as_matrix(c).noalias() = detail::as_matrix(a) * detail::as_matrix(b).transpose();
  return c;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace stein
