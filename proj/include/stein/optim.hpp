#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "stein/tensor.hpp"

namespace stein {

enum class Direction { Ascent, Descent };

/// Serializable optimizer state; checkpoints carry it so training resumes
/// with the exact moments.
struct AdamSnapshot {
  double lr = 0.0, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::int64_t t = 0;
  Tensor m, v;
};

/// Adam with bias correction over a flat parameter vector. The learning rate
/// may be changed between steps (pacing) without touching m, v or t.
class Adam {
 public:
  double lr;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit Adam(double lr_, std::size_t dim = 0) : lr(lr_) {
    if (!(lr_ > 0.0)) throw std::invalid_argument("Adam: lr must be > 0");
    if (dim > 0) reset(dim);
  }

  void reset(std::size_t dim) {
    m_ = Tensor::zeros({dim});
    v_ = Tensor::zeros({dim});
    t_ = 0;
  }

  std::int64_t step_count() const { return t_; }
  const Tensor& first_moment() const { return m_; }
  const Tensor& second_moment() const { return v_; }

  AdamSnapshot snapshot() const { return AdamSnapshot{lr, beta1, beta2, eps, t_, m_, v_}; }

  static Adam from_snapshot(const AdamSnapshot& s) {
    Adam a(s.lr);
    a.beta1 = s.beta1;
    a.beta2 = s.beta2;
    a.eps = s.eps;
    a.m_ = s.m;
    a.v_ = s.v;
    a.t_ = s.t;
    return a;
  }

  void step(Tensor& params, const Tensor& grad, Direction dir) {
    check(params, grad);
    if (m_.empty()) reset(params.size());
    if (m_.size() != params.size()) throw std::invalid_argument("Adam: state dim mismatch");
    ++t_;
    double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    double sign = dir == Direction::Descent ? -1.0 : 1.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      double g = grad[i];
      m_[i] = beta1 * m_[i] + (1.0 - beta1) * g;
      v_[i] = beta2 * v_[i] + (1.0 - beta2) * g * g;
      double mhat = m_[i] / c1;
      double vhat = v_[i] / c2;
      params[i] += sign * lr * mhat / (std::sqrt(vhat) + eps);
    }
  }

 private:
  static void check(const Tensor& params, const Tensor& grad) {
    if (!params.same_shape(grad)) throw std::invalid_argument("Adam: dim mismatch");
    if (!grad.all_finite()) throw std::invalid_argument("Adam: non-finite gradient");
  }

  Tensor m_, v_;
  std::int64_t t_ = 0;
};

class Sgd {
 public:
  double lr;
  explicit Sgd(double lr_) : lr(lr_) {
    if (!(lr_ > 0.0)) throw std::invalid_argument("Sgd: lr must be > 0");
  }
  void step(Tensor& params, const Tensor& grad, Direction dir) {
    if (!params.same_shape(grad)) throw std::invalid_argument("Sgd: dim mismatch");
    if (!grad.all_finite()) throw std::invalid_argument("Sgd: non-finite gradient");
    double sign = dir == Direction::Descent ? -1.0 : 1.0;
    for (std::size_t i = 0; i < params.size(); ++i) params[i] += sign * lr * grad[i];
  }
};

/// Per-coordinate AdaGrad scaling, used as the optional SVGD step rule.
class AdaGrad {
 public:
  double lr;
  double eps = 1e-6;

  explicit AdaGrad(double lr_) : lr(lr_) {
    if (!(lr_ > 0.0)) throw std::invalid_argument("AdaGrad: lr must be > 0");
  }

  void step(Tensor& params, const Tensor& grad, Direction dir) {
    if (!params.same_shape(grad)) throw std::invalid_argument("AdaGrad: dim mismatch");
    if (!grad.all_finite()) throw std::invalid_argument("AdaGrad: non-finite gradient");
    if (acc_.empty()) acc_ = Tensor::zeros(params.shape());
    double sign = dir == Direction::Descent ? -1.0 : 1.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      acc_[i] += grad[i] * grad[i];
      params[i] += sign * lr * grad[i] / (std::sqrt(acc_[i]) + eps);
    }
  }

 private:
  Tensor acc_;
};

}  // namespace stein
