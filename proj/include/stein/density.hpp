#pragma once

#include <cmath>
#include <span>
#include <stdexcept>

#include "stein/tensor.hpp"

namespace stein {

/// A target distribution known up to normalization: log p̃(x) and its score.
class TargetDensity {
 public:
  virtual ~TargetDensity() = default;
  virtual std::size_t dim() const = 0;
  virtual double log_density_unnormalized(std::span<const double> x) const = 0;
  virtual Tensor grad_log_density(std::span<const double> x) const = 0;

  /// Score rows for a batch; default loops, implementations may batch.
  virtual Tensor grad_log_density_batch(const Tensor& points) const {
    Tensor g = Tensor::zeros({points.rows(), points.cols()});
    for (std::size_t i = 0; i < points.rows(); ++i) {
      Tensor gi = grad_log_density(points.row(i));
      g.set_row(i, {gi.data(), gi.size()});
    }
    return g;
  }
};

/// Self-test required of every TargetDensity: the score must match central
/// finite differences of log_density_unnormalized.
inline bool score_matches_fd(const TargetDensity& p, std::span<const double> x,
                             double step = 1e-5, double rel_tol = 1e-6) {
  Tensor g = p.grad_log_density(x);
  std::vector<double> xp(x.begin(), x.end());
  double worst = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    double keep = xp[k];
    xp[k] = keep + step;
    double fp = p.log_density_unnormalized(xp);
    xp[k] = keep - step;
    double fm = p.log_density_unnormalized(xp);
    xp[k] = keep;
    double fd = (fp - fm) / (2.0 * step);
    double denom = std::max({std::abs(fd), std::abs(g[k]), 1e-8});
    worst = std::max(worst, std::abs(fd - g[k]) / denom);
  }
  return worst <= rel_tol;
}

}  // namespace stein
