#pragma once

#include <stdexcept>

#include "stein/tensor.hpp"

namespace stein {

/// n particles in R^d, stored as an n×d matrix.
struct ParticleSet {
  Tensor positions;

  ParticleSet() = default;
  explicit ParticleSet(Tensor pos) : positions(std::move(pos)) {
    if (positions.rank() != 2 || positions.rows() < 1)
      throw std::invalid_argument("ParticleSet: need an n×d matrix with n >= 1");
    if (!positions.all_finite())
      throw std::invalid_argument("ParticleSet: non-finite position");
  }

  std::size_t count() const { return positions.rows(); }
  std::size_t dim() const { return positions.cols(); }

  Tensor mean() const {
    Tensor m = Tensor::zeros({dim()});
    for (std::size_t i = 0; i < count(); ++i)
      for (std::size_t j = 0; j < dim(); ++j) m[j] += positions.at(i, j);
    m *= 1.0 / static_cast<double>(count());
    return m;
  }

  /// Per-dimension population variance.
  Tensor variance() const {
    Tensor m = mean();
    Tensor v = Tensor::zeros({dim()});
    for (std::size_t i = 0; i < count(); ++i)
      for (std::size_t j = 0; j < dim(); ++j) {
        double d = positions.at(i, j) - m[j];
        v[j] += d * d;
      }
    v *= 1.0 / static_cast<double>(count());
    return v;
  }
};

}  // namespace stein
