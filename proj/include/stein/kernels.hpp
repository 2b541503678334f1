#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "stein/mlp.hpp"
#include "stein/tensor.hpp"

namespace stein {

inline constexpr double kBandwidthFloor = 1e-6;

/// Gaussian RBF kernel, exponent convention k(x,x') = exp(-‖x-x'‖²/h²).
class RbfKernel {
 public:
  explicit RbfKernel(double h) : h_(h) {
    if (!(h > 0.0)) throw std::invalid_argument("RbfKernel: bandwidth must be > 0");
  }

  double bandwidth() const { return h_; }

  double eval(std::span<const double> x, std::span<const double> x2) const {
    check(x, x2);
    return std::exp(-squared_distance(x, x2) / (h_ * h_));
  }

  /// ∇ₓ k(x, x2) = -(2/h²)(x - x2)·k(x, x2)
  Tensor grad_x(std::span<const double> x, std::span<const double> x2) const {
    check(x, x2);
    double k = std::exp(-squared_distance(x, x2) / (h_ * h_));
    double c = -2.0 / (h_ * h_) * k;
    Tensor g = Tensor::zeros({x.size()});
    for (std::size_t i = 0; i < x.size(); ++i) g[i] = c * (x[i] - x2[i]);
    return g;
  }

 private:
  static void check(std::span<const double> x, std::span<const double> x2) {
    if (x.size() != x2.size()) throw std::invalid_argument("RbfKernel: dimension mismatch");
    for (std::size_t i = 0; i < x.size(); ++i)
      if (!std::isfinite(x[i]) || !std::isfinite(x2[i]))
        throw std::invalid_argument("RbfKernel: non-finite input");
  }

  double h_;
};

/// RBF kernel on an embedded representation: k(x,x') = exp(-‖E(x)-E(x')‖²/h²).
/// A null embedder means the identity embedding, in which case this reduces
/// exactly to RbfKernel.
class FeatureKernel {
 public:
  FeatureKernel(double h, const Mlp* embedder) : base_(h), embedder_(embedder) {}

  double bandwidth() const { return base_.bandwidth(); }
  const Mlp* embedder() const { return embedder_; }

  Tensor embed(std::span<const double> x) const {
    if (!embedder_) return Tensor::from_data({x.size()}, {x.begin(), x.end()});
    Tensor in = Tensor::from_data({1, x.size()}, {x.begin(), x.end()});
    Tensor out = embedder_->forward(in);
    return Tensor::wrap({out.size()}, {out.data(), out.data() + out.size()});
  }

  double eval(std::span<const double> x, std::span<const double> x2) const {
    if (!embedder_) return base_.eval(x, x2);
    Tensor e1 = embed(x), e2 = embed(x2);
    return base_.eval({e1.data(), e1.size()}, {e2.data(), e2.size()});
  }

  /// Full chain rule through the embedder:
  /// ∇ₓ k = k · (-2/h²) · J_E(x)ᵀ (E(x) - E(x2)).
  Tensor grad_x(std::span<const double> x, std::span<const double> x2) const {
    if (!embedder_) return base_.grad_x(x, x2);
    Tensor e1 = embed(x), e2 = embed(x2);
    double h = base_.bandwidth();
    double k = std::exp(-squared_distance({e1.data(), e1.size()}, {e2.data(), e2.size()}) /
                        (h * h));
    Tensor cot = Tensor::zeros({1, e1.size()});
    double c = -2.0 / (h * h) * k;
    for (std::size_t i = 0; i < e1.size(); ++i) cot.at(0, i) = c * (e1[i] - e2[i]);
    Tensor in = Tensor::from_data({1, x.size()}, {x.begin(), x.end()});
    Tensor g = vjp_input(*embedder_, in, cot);
    return Tensor::wrap({x.size()}, {g.data(), g.data() + g.size()});
  }

 private:
  RbfKernel base_;
  const Mlp* embedder_;
};

/// All n(n-1)/2 pairwise Euclidean distances between rows of an n×d matrix.
inline std::vector<double> pairwise_distances(const Tensor& points) {
  std::size_t n = points.rows();
  std::vector<double> d;
  d.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      d.push_back(std::sqrt(squared_distance(points.row(i), points.row(j))));
  return d;
}

/// h = scale × median of pairwise distances in embedded space, floored at
/// 1e-6. Even-sized lists use the lower median (index (k-1)/2 of the sorted
/// list), so the result is deterministic and permutation-invariant.
inline double median_bandwidth(const Tensor& points, double scale, const Mlp* embed = nullptr) {
  if (points.rows() < 2)
    throw std::invalid_argument("median_bandwidth: need at least 2 points");
  Tensor embedded = embed ? embed->forward(points) : points;
  std::vector<double> d = pairwise_distances(embedded);
  std::size_t mid = (d.size() - 1) / 2;
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid), d.end());
  double med = d[mid];
  return std::max(scale * med, kBandwidthFloor);
}

/// Bandwidth policy shared by SVGD, amortized training and SteinGAN.
struct BandwidthPolicy {
  enum class Kind { Fixed, MedianScaled };
  Kind kind = Kind::MedianScaled;
  double value = 0.5;  // fixed h, or the median scale factor

  static BandwidthPolicy fixed(double h) { return {Kind::Fixed, h}; }
  static BandwidthPolicy median(double scale = 0.5) { return {Kind::MedianScaled, scale}; }

  double resolve(const Tensor& points, const Mlp* embed = nullptr) const {
    if (kind == Kind::Fixed) return value;
    return median_bandwidth(points, value, embed);
  }
};

}  // namespace stein
