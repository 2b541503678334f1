#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "stein/mlp.hpp"
#include "stein/rng.hpp"
#include "stein/tensor.hpp"

namespace testutil {

inline double rel_err(double got, double want) {
  double denom = std::max({std::abs(got), std::abs(want), 1e-10});
  return std::abs(got - want) / denom;
}

inline double max_rel_err(const stein::Tensor& got, const stein::Tensor& want) {
  double worst = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i)
    worst = std::max(worst, rel_err(got[i], want[i]));
  return worst;
}

inline double max_abs_diff(const stein::Tensor& a, const stein::Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

/// Central finite differences of head(net(input)) w.r.t. flattened params.
inline stein::Tensor fd_grad_params(const stein::Mlp& net, const stein::Tensor& input,
                                    stein::Head head, double step = 1e-5) {
  stein::Mlp work = net;
  stein::Tensor theta = work.flatten_params();
  stein::Tensor g = stein::Tensor::zeros({theta.size()});
  auto eval = [&](const stein::Tensor& t) {
    work.set_params(t);
    stein::Tensor out = work.forward(input);
    return head == stein::Head::Sum ? out.sum() : out[0];
  };
  for (std::size_t k = 0; k < theta.size(); ++k) {
    double keep = theta[k];
    theta[k] = keep + step;
    double fp = eval(theta);
    theta[k] = keep - step;
    double fm = eval(theta);
    theta[k] = keep;
    g[k] = (fp - fm) / (2.0 * step);
  }
  work.set_params(theta);
  return g;
}

/// Central finite differences w.r.t. the input entries.
inline stein::Tensor fd_grad_input(const stein::Mlp& net, const stein::Tensor& input,
                                   stein::Head head, double step = 1e-5) {
  stein::Tensor x = input;
  stein::Tensor g = stein::Tensor::zeros(x.shape());
  auto eval = [&]() {
    stein::Tensor out = net.forward(x);
    return head == stein::Head::Sum ? out.sum() : out[0];
  };
  for (std::size_t k = 0; k < x.size(); ++k) {
    double keep = x[k];
    x[k] = keep + step;
    double fp = eval();
    x[k] = keep - step;
    double fm = eval();
    x[k] = keep;
    g[k] = (fp - fm) / (2.0 * step);
  }
  return g;
}

/// Central finite differences of an arbitrary scalar functional.
template <class F>
stein::Tensor fd_grad(F f, const stein::Tensor& at, double step = 1e-5) {
  stein::Tensor x = at;
  stein::Tensor g = stein::Tensor::zeros(x.shape());
  for (std::size_t k = 0; k < x.size(); ++k) {
    double keep = x[k];
    x[k] = keep + step;
    double fp = f(x);
    x[k] = keep - step;
    double fm = f(x);
    x[k] = keep;
    g[k] = (fp - fm) / (2.0 * step);
  }
  return g;
}

/// Random small net with smooth activations, inputs bounded in [-3, 3].
inline stein::Mlp random_smooth_net(stein::Rng& rng, std::size_t in, std::size_t hidden,
                                    std::size_t out, stein::Act hidden_act = stein::Act::Tanh,
                                    stein::Act out_act = stein::Act::Identity) {
  std::vector<stein::LayerSpec> specs{{in, hidden, hidden_act}, {hidden, out, out_act}};
  return stein::Mlp::init_gaussian(specs, 0.6, rng);
}

inline stein::Tensor random_input(stein::Rng& rng, std::size_t rows, std::size_t cols,
                                  double lo = -3.0, double hi = 3.0) {
  stein::Tensor t = stein::Tensor::zeros({rows, cols});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace testutil
