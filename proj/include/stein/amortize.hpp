#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Cholesky>

#include "stein/density.hpp"
#include "stein/errors.hpp"
#include "stein/kernels.hpp"
#include "stein/mlp.hpp"
#include "stein/optim.hpp"
#include "stein/particles.hpp"
#include "stein/rng.hpp"
#include "stein/svgd.hpp"
#include "stein/tensor.hpp"
#include "stein/trace.hpp"

namespace stein {

// ---------------------------------------------------------------------------
// Noise source ξ ~ q₀
// ---------------------------------------------------------------------------

struct NoiseSource {
  enum class Law { UniformPm1, StandardNormal };

  std::size_t dim;
  Law law;
  Rng rng;

  NoiseSource(std::size_t dim_, Law law_, std::uint64_t seed)
      : dim(dim_), law(law_), rng(seed) {}

  Tensor draw(std::size_t m) {
    Tensor out = Tensor::zeros({m, dim});
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = law == Law::UniformPm1 ? rng.uniform_pm1() : rng.normal();
    return out;
  }
};

inline const char* noise_law_name(NoiseSource::Law law) {
  return law == NoiseSource::Law::UniformPm1 ? "uniform_pm1" : "normal";
}

inline NoiseSource::Law noise_law_from_name(const std::string& s) {
  if (s == "uniform_pm1") return NoiseSource::Law::UniformPm1;
  if (s == "normal") return NoiseSource::Law::StandardNormal;
  throw std::invalid_argument("unknown noise law: " + s);
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

enum class AmortizeRule { Fit, LeastSquares, ChainRule };

inline const char* amortize_rule_name(AmortizeRule r) {
  switch (r) {
    case AmortizeRule::Fit: return "fit";
    case AmortizeRule::LeastSquares: return "least_squares";
    case AmortizeRule::ChainRule: return "chain_rule";
  }
  return "chain_rule";
}

inline AmortizeRule amortize_rule_from_name(const std::string& s) {
  if (s == "fit") return AmortizeRule::Fit;
  if (s == "least_squares") return AmortizeRule::LeastSquares;
  if (s == "chain_rule") return AmortizeRule::ChainRule;
  throw std::invalid_argument("unknown amortize rule: " + s);
}

struct AmortizeConfig {
  AmortizeRule rule = AmortizeRule::ChainRule;
  std::size_t batch = 100;      // m
  double step = 0.1;            // ε of the generator update rules
  int inner_fit_steps = 5;
  double ridge = 1e-6;          // λ for the least-squares rule
  BandwidthPolicy bandwidth = BandwidthPolicy::median(0.5);
  std::size_t iterations = 1000;
  bool use_optimizer = true;    // chain rule: feed the pseudo-gradient to Adam
  double adam_lr = 1e-3;
  int eta_steps_per_theta = 1;  // generator repetitions per outer iteration

  void validate() const {
    if (batch < 1) throw std::invalid_argument("AmortizeConfig: batch must be >= 1");
    if (!(step >= 0.0)) throw std::invalid_argument("AmortizeConfig: step must be >= 0");
    if (ridge < 0.0) throw std::invalid_argument("AmortizeConfig: ridge must be >= 0");
    if (inner_fit_steps < 1)
      throw std::invalid_argument("AmortizeConfig: inner_fit_steps must be >= 1");
    if (eta_steps_per_theta < 1)
      throw std::invalid_argument("AmortizeConfig: eta_steps_per_theta must be >= 1");
  }
};

struct AmortizeStepInfo {
  double update_norm = 0.0;
  double bandwidth = 0.0;
  double fit_objective_initial = std::nan("");
  double fit_objective_final = std::nan("");
};

// ---------------------------------------------------------------------------
// Rule cores (explicit batch; the high-level steps below draw the batch)
// ---------------------------------------------------------------------------

/// SVGD direction of the current batch outputs, treating the m outputs as
/// the particle set. Returns Δx [m×d] and the bandwidth used.
inline Tensor amortize_delta(const Mlp& gen, const Tensor& xi, const TargetDensity& p,
                             const BandwidthPolicy& policy, double* h_out = nullptr) {
  Tensor outputs = gen.forward(xi);
  ParticleSet particles(outputs);
  double h = particles.count() >= 2
                 ? policy.resolve(outputs)
                 : (policy.kind == BandwidthPolicy::Kind::Fixed ? policy.value : 1.0);
  if (h_out) *h_out = h;
  Tensor scores = p.grad_log_density_batch(outputs);
  return svgd_direction(particles, scores, RbfKernel(h));
}

namespace detail {

inline double fit_objective(const Mlp& gen, const Tensor& xi, const Tensor& targets) {
  Tensor out = gen.forward(xi);
  double obj = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    double d = out[i] - targets[i];
    obj += d * d;
  }
  return obj;
}

inline Tensor fit_gradient(const Mlp& gen, const Tensor& xi, const Tensor& targets) {
  Tape tape;
  Var x = tape.input(xi);
  Mlp::OnTape on = gen.forward_on(tape, x);
  Var r = tape.sub(on.out, tape.leaf(targets));
  Var loss = tape.sum(tape.mul(r, r));
  tape.backward(loss);
  return gen.flatten_adjoints(tape, on);
}

inline void check_finite_params(const Mlp& gen, const char* who) {
  if (!gen.params_finite()) throw DivergenceError(std::string(who) + ": NaN in parameters");
}

}  // namespace detail

/// Fit rule: targets x' = x + εΔx, then `inner_steps` descent steps on
/// Σᵢ‖f(η;ξᵢ) - xᵢ'‖². Each inner step backtracks (halving) until the
/// objective does not increase, so the non-increase postcondition holds
/// unconditionally.
inline AmortizeStepInfo apply_fit(Mlp& gen, const Tensor& xi, const Tensor& targets,
                                  int inner_steps) {
  AmortizeStepInfo info;
  Tensor theta0 = gen.flatten_params();
  double obj = detail::fit_objective(gen, xi, targets);
  info.fit_objective_initial = obj;
  double alpha = 1e-2;
  for (int s = 0; s < inner_steps; ++s) {
    Tensor g = detail::fit_gradient(gen, xi, targets);
    double gnorm2 = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) gnorm2 += g[k] * g[k];
    if (gnorm2 == 0.0) break;
    Tensor theta = gen.flatten_params();
    double trial_obj = obj;
    for (int halvings = 0; halvings < 60; ++halvings) {
      Tensor cand = theta;
      for (std::size_t k = 0; k < cand.size(); ++k) cand[k] -= alpha * g[k];
      gen.set_params(cand);
      trial_obj = detail::fit_objective(gen, xi, targets);
      if (trial_obj <= obj) break;
      alpha *= 0.5;
    }
    if (trial_obj > obj) {  // no acceptable step at any scale: restore
      gen.set_params(theta);
      break;
    }
    obj = trial_obj;
    alpha *= 2.0;  // optimistic growth for the next inner step
  }
  info.fit_objective_final = obj;
  if (info.fit_objective_final > info.fit_objective_initial + 1e-9)
    throw std::logic_error("apply_fit: objective increased over inner steps");
  Tensor theta1 = gen.flatten_params();
  info.update_norm = (theta1 - theta0).norm();
  detail::check_finite_params(gen, "apply_fit");
  return info;
}

/// Least-squares rule: solve (JᵀJ + λI)δ = JᵀΔ over the stacked per-sample
/// Jacobians, then η ← η + εδ.
inline AmortizeStepInfo apply_ls(Mlp& gen, const Tensor& xi, const Tensor& delta, double eps,
                                 double ridge) {
  std::size_t m = xi.rows(), d = gen.out_dim(), p = gen.param_count();
  if (p > 5000)
    throw std::invalid_argument("apply_ls: parameter count exceeds the P<=5000 solve guard");

  Tensor jac = Tensor::zeros({m * d, p});  // stacked ∂f(η;ξᵢ)/∂η
  for (std::size_t i = 0; i < m; ++i) {
    Tensor row_in = Tensor::zeros({1, xi.cols()});
    for (std::size_t c = 0; c < xi.cols(); ++c) row_in.at(0, c) = xi.at(i, c);
    Tape tape;
    Var x = tape.input(row_in);
    Mlp::OnTape on = gen.forward_on(tape, x);
    for (std::size_t r = 0; r < d; ++r) {
      Tensor seed = Tensor::zeros({1, d});
      seed.at(0, r) = 1.0;
      tape.backward_seeded(on.out, seed);
      Tensor jrow = gen.flatten_adjoints(tape, on);
      for (std::size_t c = 0; c < p; ++c) jac.at(i * d + r, c) = jrow[c];
    }
  }

  Eigen::MatrixXd jtj = detail::as_matrix(jac).transpose() * detail::as_matrix(jac);
  for (std::size_t k = 0; k < p; ++k) jtj(static_cast<Eigen::Index>(k),
                                          static_cast<Eigen::Index>(k)) += ridge;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
  for (std::size_t r = 0; r < m * d; ++r)
    for (std::size_t c = 0; c < p; ++c)
      rhs(static_cast<Eigen::Index>(c)) += jac.at(r, c) * delta[r];

  Eigen::LLT<Eigen::MatrixXd> llt(jtj);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error(
        "apply_ls: normal equations are singular; use ridge > 0 to regularize");
  Eigen::VectorXd sol = llt.solve(rhs);

  AmortizeStepInfo info;
  Tensor theta = gen.flatten_params();
  double norm2 = 0.0;
  for (std::size_t k = 0; k < p; ++k) {
    double step_k = eps * sol(static_cast<Eigen::Index>(k));
    theta[k] += step_k;
    norm2 += step_k * step_k;
  }
  gen.set_params(theta);
  info.update_norm = std::sqrt(norm2);
  detail::check_finite_params(gen, "apply_ls");
  return info;
}

/// Chain rule: η ← η + ε Σᵢ ∂ηf(η;ξᵢ)ᵀ Δxᵢ, or the same pseudo-gradient fed
/// to Adam (ascent along Δx) when an optimizer is supplied.
inline AmortizeStepInfo apply_chain(Mlp& gen, const Tensor& xi, const Tensor& delta, double eps,
                                    Adam* opt = nullptr) {
  Tensor g = vjp_params(gen, xi, delta);
  Tensor theta = gen.flatten_params();
  Tensor before = theta;
  if (opt) {
    opt->step(theta, g, Direction::Ascent);
  } else {
    for (std::size_t k = 0; k < theta.size(); ++k) theta[k] += eps * g[k];
  }
  gen.set_params(theta);
  AmortizeStepInfo info;
  info.update_norm = (theta - before).norm();
  detail::check_finite_params(gen, "apply_chain");
  return info;
}

// ---------------------------------------------------------------------------
// Spec-level steps: draw the batch, compute Δx, apply one rule
// ---------------------------------------------------------------------------

inline AmortizeStepInfo amortized_step_fit(Mlp& gen, const TargetDensity& p,
                                           const AmortizeConfig& cfg, NoiseSource& noise) {
  cfg.validate();
  if (cfg.rule != AmortizeRule::Fit)
    throw std::invalid_argument("amortized_step_fit: config rule is not fit");
  Tensor xi = noise.draw(cfg.batch);
  double h = 0.0;
  Tensor delta = amortize_delta(gen, xi, p, cfg.bandwidth, &h);
  Tensor targets = gen.forward(xi);
  for (std::size_t i = 0; i < targets.size(); ++i) targets[i] += cfg.step * delta[i];
  AmortizeStepInfo info = apply_fit(gen, xi, targets, cfg.inner_fit_steps);
  info.bandwidth = h;
  return info;
}

inline AmortizeStepInfo amortized_step_ls(Mlp& gen, const TargetDensity& p,
                                          const AmortizeConfig& cfg, NoiseSource& noise) {
  cfg.validate();
  if (cfg.rule != AmortizeRule::LeastSquares)
    throw std::invalid_argument("amortized_step_ls: config rule is not least_squares");
  Tensor xi = noise.draw(cfg.batch);
  double h = 0.0;
  Tensor delta = amortize_delta(gen, xi, p, cfg.bandwidth, &h);
  AmortizeStepInfo info = apply_ls(gen, xi, delta, cfg.step, cfg.ridge);
  info.bandwidth = h;
  return info;
}

inline AmortizeStepInfo amortized_step_chain(Mlp& gen, const TargetDensity& p,
                                             const AmortizeConfig& cfg, NoiseSource& noise,
                                             Adam* opt = nullptr) {
  cfg.validate();
  if (cfg.rule != AmortizeRule::ChainRule)
    throw std::invalid_argument("amortized_step_chain: config rule is not chain_rule");
  Tensor xi = noise.draw(cfg.batch);
  double h = 0.0;
  Tensor delta = amortize_delta(gen, xi, p, cfg.bandwidth, &h);
  AmortizeStepInfo info = apply_chain(gen, xi, delta, cfg.step, opt);
  info.bandwidth = h;
  return info;
}

// ---------------------------------------------------------------------------
// Reparameterization oracle on the location-scale family
// ---------------------------------------------------------------------------

/// f(η;ξ) = μ + σ·ξ realized as one identity layer with a diagonal weight
/// matrix: x = ξ·W + b, q_η = Π_k N(b_k, w_kk²). Anything else is rejected:
/// the oracle requires a tractable q_η.
struct LocationScale {
  Tensor mu;     // = b
  Tensor sigma;  // = |diag(W)|
};

inline LocationScale location_scale_view(const Mlp& gen) {
  if (gen.layer_count() != 1 || gen.layer(0).act != Act::Identity ||
      gen.in_dim() != gen.out_dim() || !gen.layer(0).has_bias())
    throw std::invalid_argument(
        "reparam oracle: generator must be a single biased identity layer with in_dim == "
        "out_dim");
  const Tensor& w = gen.layer(0).w;
  std::size_t d = gen.in_dim();
  LocationScale ls{gen.layer(0).b, Tensor::zeros({d})};
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < d; ++c) {
      if (r != c && w.at(r, c) != 0.0)
        throw std::invalid_argument("reparam oracle: weight matrix must be diagonal");
      if (r == c) {
        if (w.at(r, c) == 0.0)
          throw std::invalid_argument("reparam oracle: zero scale entry (q degenerate)");
        ls.sigma[r] = std::abs(w.at(r, c));
      }
    }
  return ls;
}

/// Per-sample Δ̃x = ∇log p(x) - ∇log q_η(x) for location-scale generators.
inline Tensor reparam_delta(const Mlp& gen, const Tensor& x, const TargetDensity& p) {
  LocationScale ls = location_scale_view(gen);
  Tensor delta = p.grad_log_density_batch(x);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) {
      double var = ls.sigma[j] * ls.sigma[j];
      delta.at(i, j) -= (ls.mu[j] - x.at(i, j)) / var;
    }
  return delta;
}

/// One reparameterized KL descent step; requires standard normal noise so
/// q_η is the matching closed-form Gaussian. Used only as a cross-check
/// oracle against the amortized rules.
inline AmortizeStepInfo reparam_kl_step(Mlp& gen, const TargetDensity& p,
                                        const AmortizeConfig& cfg, NoiseSource& noise,
                                        Adam* opt = nullptr) {
  cfg.validate();
  if (noise.law != NoiseSource::Law::StandardNormal)
    throw std::invalid_argument("reparam_kl_step: noise law must be standard normal");
  Tensor xi = noise.draw(cfg.batch);
  Tensor x = gen.forward(xi);
  Tensor delta = reparam_delta(gen, x, p);
  return apply_chain(gen, xi, delta, cfg.step, opt);
}

// ---------------------------------------------------------------------------
// Training driver
// ---------------------------------------------------------------------------

inline std::vector<std::string> amortize_trace_columns(std::size_t d) {
  std::vector<std::string> cols{"step", "fit_objective", "update_norm", "batch_ksd"};
  for (std::size_t j = 0; j < d; ++j) cols.push_back("mean_" + std::to_string(j));
  for (std::size_t j = 0; j < d; ++j) cols.push_back("std_" + std::to_string(j));
  return cols;
}

/// Trains the generator in place (so the caller keeps the latest parameters
/// even when a guard aborts the run) and returns the per-step trace.
inline MetricTrace amortize_train(Mlp& gen, const TargetDensity& p, const AmortizeConfig& cfg,
                                  NoiseSource::Law law, std::size_t noise_dim,
                                  std::uint64_t seed) {
  cfg.validate();
  NoiseSource noise(noise_dim, law, Rng::derive_seed(seed, "noise"));
  Adam opt(cfg.adam_lr, gen.param_count());
  MetricTrace trace(amortize_trace_columns(gen.out_dim()));

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    AmortizeStepInfo info;
    switch (cfg.rule) {
      case AmortizeRule::Fit:
        info = amortized_step_fit(gen, p, cfg, noise);
        break;
      case AmortizeRule::LeastSquares:
        info = amortized_step_ls(gen, p, cfg, noise);
        break;
      case AmortizeRule::ChainRule:
        info = amortized_step_chain(gen, p, cfg, noise, cfg.use_optimizer ? &opt : nullptr);
        break;
    }

    Tensor sample = gen.forward(noise.draw(cfg.batch));
    if (sample.max_abs() > kDivergenceGuard)
      throw DivergenceError("amortize_train: outputs exceeded guard at step " +
                            std::to_string(it));
    ParticleSet ps(sample);
    Tensor mean = ps.mean();
    Tensor var = ps.variance();
    double ksd = 0.0;
    if (ps.count() >= 2) {
      double h = median_bandwidth(sample, 1.0);
      ksd = ksd_estimate(ps, p, RbfKernel(h));
    }
    auto row = trace.row();
    row.num(static_cast<double>(it));
    row.num(info.fit_objective_final);
    row.num(info.update_norm);
    row.num(ksd);
    for (std::size_t j = 0; j < mean.size(); ++j) row.num(mean[j]);
    for (std::size_t j = 0; j < var.size(); ++j) row.num(std::sqrt(var[j]));
    row.commit();
  }
  return trace;
}

}  // namespace stein
