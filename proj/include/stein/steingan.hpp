#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "stein/amortize.hpp"
#include "stein/energy.hpp"
#include "stein/errors.hpp"
#include "stein/kernels.hpp"
#include "stein/mlp.hpp"
#include "stein/optim.hpp"
#include "stein/svgd.hpp"
#include "stein/tensor.hpp"
#include "stein/trace.hpp"

namespace stein {

// ---------------------------------------------------------------------------
// MLE gradient of the energy parameters
// ---------------------------------------------------------------------------

/// ∇̂θL = mean over the fake batch of ∂θφ minus mean over the real batch
/// (ascent direction on the likelihood).
inline Tensor mle_theta_gradient(const EnergyModel& model, const Tensor& real,
                                 const Tensor& fake,
                                 const std::vector<int>* real_labels = nullptr,
                                 const std::vector<int>* fake_labels = nullptr) {
  if (real.rows() == 0 || fake.rows() == 0)
    throw std::invalid_argument("mle_theta_gradient: empty batch");
  if (real.cols() != fake.cols() || real.cols() != model.dim())
    throw std::invalid_argument("mle_theta_gradient: dimension mismatch");
  Tensor g = model.grad_theta_phi_mean(fake, fake_labels);
  g -= model.grad_theta_phi_mean(real, real_labels);
  return g;
}

/// Discounted form: (1-γ)·mean_fake(∂θφ) - mean_real(∂θφ). γ = 0 recovers
/// mle_theta_gradient exactly (multiplying by 1.0 is exact).
inline Tensor mle_theta_gradient_discounted(const EnergyModel& model, const Tensor& real,
                                            const Tensor& fake, double gamma,
                                            const std::vector<int>* real_labels = nullptr,
                                            const std::vector<int>* fake_labels = nullptr) {
  if (!(gamma >= 0.0 && gamma <= 1.0))
    throw std::invalid_argument("mle_theta_gradient_discounted: gamma must be in [0,1]");
  if (real.rows() == 0 || fake.rows() == 0)
    throw std::invalid_argument("mle_theta_gradient_discounted: empty batch");
  if (real.cols() != fake.cols() || real.cols() != model.dim())
    throw std::invalid_argument("mle_theta_gradient_discounted: dimension mismatch");
  Tensor g = model.grad_theta_phi_mean(fake, fake_labels);
  g *= (1.0 - gamma);
  g -= model.grad_theta_phi_mean(real, real_labels);
  return g;
}

// ---------------------------------------------------------------------------
// Pacing controller
// ---------------------------------------------------------------------------

enum class PacingMode { Normal, Fast, Frozen };

inline const char* pacing_mode_name(PacingMode m) {
  switch (m) {
    case PacingMode::Normal: return "normal";
    case PacingMode::Fast: return "fast";
    case PacingMode::Frozen: return "frozen";
  }
  return "normal";
}

struct PacingState {
  PacingMode mode = PacingMode::Normal;
  double last_real_energy = std::nan("");
  double last_fake_energy = std::nan("");
};

struct SteinGanConfig {
  double gamma = 0.7;            // discount of the fake-batch term
  double gen_lr = 0.001;
  double energy_lr = 0.0001;
  double energy_lr_fast = 0.0005;
  double freeze_gap = 0.5;       // |real - fake| threshold that freezes θ
  std::size_t batch = 100;       // m
  AmortizeRule gen_rule = AmortizeRule::ChainRule;
  double gen_step = 0.1;         // ε for the fit / least-squares rules
  int inner_fit_steps = 5;
  double ridge = 1e-6;
  int eta_steps_per_theta = 1;
  double kernel_scale = 0.5;     // h = scale × med over fake-batch embeddings
  std::size_t noise_dim = 100;
  NoiseSource::Law noise_law = NoiseSource::Law::UniformPm1;
  std::size_t iterations = 1000;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(gamma >= 0.0 && gamma <= 1.0))
      throw std::invalid_argument("SteinGanConfig: gamma must be in [0,1]");
    if (!(gen_lr > 0.0) || !(energy_lr > 0.0) || !(energy_lr_fast > 0.0))
      throw std::invalid_argument("SteinGanConfig: learning rates must be > 0");
    if (!(freeze_gap > 0.0))
      throw std::invalid_argument("SteinGanConfig: freeze_gap must be > 0");
    if (batch < 1) throw std::invalid_argument("SteinGanConfig: batch must be >= 1");
    if (eta_steps_per_theta < 1)
      throw std::invalid_argument("SteinGanConfig: eta_steps_per_theta must be >= 1");
    if (!(kernel_scale > 0.0))
      throw std::invalid_argument("SteinGanConfig: kernel_scale must be > 0");
  }
};

/// fast iff the real batch carries more energy than the fake one; frozen iff
/// the gap magnitude exceeds the threshold. Frozen wins when both trigger.
/// Memoryless: re-evaluated from the two energies every step.
inline PacingState pacing_update(const PacingState&, double mean_real_energy,
                                 double mean_fake_energy, const SteinGanConfig& cfg) {
  if (!std::isfinite(mean_real_energy) || !std::isfinite(mean_fake_energy))
    throw std::invalid_argument("pacing_update: non-finite energies");
  PacingState next;
  next.last_real_energy = mean_real_energy;
  next.last_fake_energy = mean_fake_energy;
  if (std::abs(mean_real_energy - mean_fake_energy) > cfg.freeze_gap)
    next.mode = PacingMode::Frozen;
  else if (mean_real_energy > mean_fake_energy)
    next.mode = PacingMode::Fast;
  else
    next.mode = PacingMode::Normal;
  return next;
}

// ---------------------------------------------------------------------------
// Generator sampling
// ---------------------------------------------------------------------------

struct GeneratorSpec {
  std::size_t noise_dim = 100;
  NoiseSource::Law law = NoiseSource::Law::UniformPm1;
  std::size_t num_classes = 0;  // 0 = unconditional

  std::size_t input_dim() const { return noise_dim + num_classes; }
};

/// Builds generator input rows: ξ and, for conditional generators, the
/// one-hot label appended after the noise block.
inline Tensor generator_inputs(const GeneratorSpec& spec, const Tensor& noise,
                               const std::vector<int>* labels) {
  std::size_t m = noise.rows();
  if (spec.num_classes == 0) {
    if (labels) throw std::invalid_argument("generator_inputs: unexpected labels");
    return noise;
  }
  if (!labels || labels->size() != m)
    throw std::invalid_argument("generator_inputs: labels required for conditional sampler");
  Tensor in = Tensor::zeros({m, spec.input_dim()});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < spec.noise_dim; ++j) in.at(i, j) = noise.at(i, j);
    int l = (*labels)[i];
    if (l < 0 || static_cast<std::size_t>(l) >= spec.num_classes)
      throw std::invalid_argument("generator_inputs: label out of range");
    in.at(i, spec.noise_dim + static_cast<std::size_t>(l)) = 1.0;
  }
  return in;
}

inline ParticleSet sample_generator(const Mlp& gen, const GeneratorSpec& spec, std::size_t n,
                                    std::uint64_t seed, std::optional<int> label = {}) {
  if ((spec.num_classes > 0) != label.has_value())
    throw std::invalid_argument("sample_generator: label must be given iff conditional");
  if (gen.in_dim() != spec.input_dim())
    throw std::invalid_argument("sample_generator: generator input dim mismatch");
  NoiseSource noise(spec.noise_dim, spec.law, seed);
  Tensor xi = noise.draw(n);
  std::vector<int> labels;
  const std::vector<int>* lp = nullptr;
  if (label) {
    labels.assign(n, *label);
    lp = &labels;
  }
  return ParticleSet(gen.forward(generator_inputs(spec, xi, lp)));
}

// ---------------------------------------------------------------------------
// Training loop (Algorithm: alternate sampler updates and discounted MLE
// updates of the energy, paced by the real/fake energy gap)
// ---------------------------------------------------------------------------

struct SteinGanResult {
  MetricTrace trace;
  PacingState pacing;
  AdamSnapshot gen_opt, theta_opt;
};

inline std::vector<std::string> steingan_trace_columns() {
  return {"iter",         "mean_real_energy", "mean_fake_energy", "pacing_mode",
          "bandwidth",    "gen_update_norm",  "theta_update_norm"};
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

/// Trains the sampler and the energy model in place; both keep their latest
/// parameters if a guard aborts, so the caller can dump a checkpoint.
inline SteinGanResult steingan_train(const Tensor& data, const std::vector<int>* data_labels,
                                     Mlp& gen, AutoencoderEnergy& model,
                                     const SteinGanConfig& cfg) {
  cfg.validate();
  if (data.rows() == 0) throw std::invalid_argument("steingan_train: empty dataset");
  if (data.cols() != model.dim())
    throw std::invalid_argument("steingan_train: dataset dim != energy dim");
  const bool conditional = model.conditional();
  if (conditional && !data_labels)
    throw std::invalid_argument("steingan_train: labels required for a joint energy");

  GeneratorSpec gspec{cfg.noise_dim, cfg.noise_law,
                      conditional ? model.num_classes() : 0};
  if (gen.in_dim() != gspec.input_dim())
    throw std::invalid_argument("steingan_train: generator input dim mismatch");
  if (gen.out_dim() != model.dim())
    throw std::invalid_argument("steingan_train: generator output dim != data dim");

  // empirical label frequencies drive the sampler's label draws
  std::vector<double> label_freq;
  if (conditional) {
    label_freq.assign(model.num_classes(), 0.0);
    for (int l : *data_labels) {
      if (l < 0 || static_cast<std::size_t>(l) >= model.num_classes())
        throw std::invalid_argument("steingan_train: dataset label out of range");
      label_freq[static_cast<std::size_t>(l)] += 1.0;
    }
  }

  Rng data_rng = Rng::substream(cfg.seed, "data");
  Rng noise_rng = Rng::substream(cfg.seed, "noise");
  NoiseSource noise(cfg.noise_dim, cfg.noise_law, noise_rng.bits());
  Adam gen_opt(cfg.gen_lr, gen.param_count());
  Adam theta_opt(cfg.energy_lr, model.theta_count());

  MetricTrace trace(steingan_trace_columns());
  PacingState pacing;

  auto draw_fake = [&](std::vector<int>& labels_out) -> std::pair<Tensor, Tensor> {
    Tensor xi = noise.draw(cfg.batch);
    const std::vector<int>* lp = nullptr;
    if (conditional) {
      labels_out.resize(cfg.batch);
      for (std::size_t i = 0; i < cfg.batch; ++i)
        labels_out[i] = static_cast<int>(noise_rng.categorical(label_freq));
      lp = &labels_out;
    }
    Tensor in = generator_inputs(gspec, xi, lp);
    Tensor out = gen.forward(in);
    return {std::move(in), std::move(out)};
  };

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    // --- sampler updates (repeat eta_steps_per_theta times, fresh draws) ---
    double bandwidth = 0.0;
    double gen_update_norm = 0.0;
    for (int rep = 0; rep < cfg.eta_steps_per_theta; ++rep) {
      std::vector<int> flabels;
      auto [gin, fake] = draw_fake(flabels);
      if (fake.max_abs() > kDivergenceGuard)
        throw DivergenceError("steingan_train: sampler output exceeded guard at iter " +
                              std::to_string(it));
      Tensor scores =
          model.score_batch(fake, conditional ? &flabels : nullptr);
      bandwidth = cfg.batch >= 2
                      ? median_bandwidth(fake, cfg.kernel_scale, &model.encoder())
                      : 1.0;
      ParticleSet particles(fake);
      Tensor delta =
          svgd_direction_feature_batched(particles, scores, model.encoder(), bandwidth);
      AmortizeStepInfo info;
      switch (cfg.gen_rule) {
        case AmortizeRule::ChainRule:
          info = apply_chain(gen, gin, delta, cfg.gen_step, &gen_opt);
          break;
        case AmortizeRule::LeastSquares:
          info = apply_ls(gen, gin, delta, cfg.gen_step, cfg.ridge);
          break;
        case AmortizeRule::Fit: {
          Tensor targets = fake;
          for (std::size_t k = 0; k < targets.size(); ++k)
            targets[k] += cfg.gen_step * delta[k];
          info = apply_fit(gen, gin, targets, cfg.inner_fit_steps);
          break;
        }
      }
      gen_update_norm = info.update_norm;
    }

    // --- energy update: discounted MLE step with pacing ---
    std::vector<int> rlabels;
    Tensor real = Tensor::zeros({cfg.batch, data.cols()});
    if (conditional) rlabels.resize(cfg.batch);
    for (std::size_t i = 0; i < cfg.batch; ++i) {
      std::size_t idx = static_cast<std::size_t>(data_rng.uniform01() *
                                                 static_cast<double>(data.rows()));
      if (idx >= data.rows()) idx = data.rows() - 1;
      for (std::size_t c = 0; c < data.cols(); ++c) real.at(i, c) = data.at(idx, c);
      if (conditional) rlabels[i] = (*data_labels)[idx];
    }

    std::vector<int> flabels;
    auto [gin2, fake2] = draw_fake(flabels);
    (void)gin2;
    std::vector<double> ereal = model.phi_batch(real, conditional ? &rlabels : nullptr);
    std::vector<double> efake = model.phi_batch(fake2, conditional ? &flabels : nullptr);
    double mean_real = mean_of(ereal);
    double mean_fake = mean_of(efake);
    pacing = pacing_update(pacing, mean_real, mean_fake, cfg);

    double theta_update_norm = 0.0;
    if (pacing.mode != PacingMode::Frozen) {
      theta_opt.lr = pacing.mode == PacingMode::Fast ? cfg.energy_lr_fast : cfg.energy_lr;
      Tensor g = mle_theta_gradient_discounted(model, real, fake2, cfg.gamma,
                                               conditional ? &rlabels : nullptr,
                                               conditional ? &flabels : nullptr);
      Tensor theta = model.get_theta();
      Tensor before = theta;
      theta_opt.step(theta, g, Direction::Ascent);
      model.set_theta(theta);
      theta_update_norm = (theta - before).norm();
    }

    if (!gen.params_finite() || !model.theta_finite())
      throw DivergenceError("steingan_train: NaN in a network at iter " + std::to_string(it));

    trace.row()
        .num(static_cast<double>(it))
        .num(mean_real)
        .num(mean_fake)
        .text(pacing_mode_name(pacing.mode))
        .num(bandwidth)
        .num(gen_update_norm)
        .num(theta_update_norm)
        .commit();
  }
  return SteinGanResult{std::move(trace), pacing, gen_opt.snapshot(), theta_opt.snapshot()};
}

}  // namespace stein
