#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "stein/density.hpp"
#include "stein/mlp.hpp"
#include "stein/particles.hpp"
#include "stein/rng.hpp"
#include "stein/tape.hpp"
#include "stein/tensor.hpp"

namespace stein {

inline constexpr double kDegenerateResidual = 1e-9;

/// Energy-based model: p(x|θ) ∝ exp(-φ(x,θ)). The log-partition Φ(θ) is
/// never evaluated anywhere; only φ and its gradients appear in updates.
class EnergyModel {
 public:
  virtual ~EnergyModel() = default;

  virtual std::size_t dim() const = 0;
  virtual std::size_t theta_count() const = 0;
  virtual bool conditional() const { return false; }
  virtual std::size_t num_classes() const { return 0; }

  virtual std::vector<double> phi_batch(const Tensor& points,
                                        const std::vector<int>* labels) const = 0;

  /// Rows of ∇ₓ log p = -∇ₓφ. Rows whose reconstruction residual is below
  /// the degenerate threshold come back as zeros and are flagged.
  virtual Tensor score_batch(const Tensor& points, const std::vector<int>* labels,
                             std::vector<std::uint8_t>* degenerate = nullptr) const = 0;

  /// Mean over the batch of ∂θφ, flat in the model's θ order.
  virtual Tensor grad_theta_phi_mean(const Tensor& points,
                                     const std::vector<int>* labels) const = 0;

  virtual Tensor get_theta() const = 0;
  virtual void set_theta(const Tensor& theta) = 0;
  virtual bool theta_finite() const = 0;

  double phi(std::span<const double> x, std::optional<int> y = {}) const {
    auto [pts, lab] = single(x, y);
    return phi_batch(pts, conditional() ? &lab : nullptr)[0];
  }

  Tensor grad_x_phi(std::span<const double> x, std::optional<int> y = {},
                    bool* degenerate_flag = nullptr) const {
    auto [pts, lab] = single(x, y);
    std::vector<std::uint8_t> flags;
    Tensor s = score_batch(pts, conditional() ? &lab : nullptr, &flags);
    if (degenerate_flag) *degenerate_flag = !flags.empty() && flags[0] != 0;
    Tensor g = Tensor::zeros({x.size()});
    for (std::size_t i = 0; i < x.size(); ++i) g[i] = -s.at(0, i);
    return g;
  }

  Tensor grad_theta_phi(std::span<const double> x, std::optional<int> y = {}) const {
    auto [pts, lab] = single(x, y);
    return grad_theta_phi_mean(pts, conditional() ? &lab : nullptr);
  }

 private:
  std::pair<Tensor, std::vector<int>> single(std::span<const double> x,
                                             std::optional<int> y) const {
    if (x.size() != dim()) throw std::invalid_argument("EnergyModel: dimension mismatch");
    if (conditional() != y.has_value())
      throw std::invalid_argument("EnergyModel: label must be present iff model is conditional");
    Tensor pts = Tensor::from_data({1, x.size()}, {x.begin(), x.end()});
    std::vector<int> lab;
    if (y) lab.push_back(*y);
    return {std::move(pts), std::move(lab)};
  }
};

/// ∇ₓ log p for a single point (score with sign folded in).
inline Tensor grad_x_log_p(const EnergyModel& model, std::span<const double> x,
                           std::optional<int> y = {}, bool* degenerate = nullptr) {
  Tensor g = model.grad_x_phi(x, y, degenerate);
  g *= -1.0;
  return g;
}

// ---------------------------------------------------------------------------
// Analytic targets (diagonal Gaussian and diagonal-Gaussian mixture)
// ---------------------------------------------------------------------------

class AnalyticTarget : public TargetDensity {
 public:
  struct Component {
    double weight;
    Tensor mean;
    Tensor var;  // diagonal
  };

  static AnalyticTarget gaussian(Tensor mean, Tensor var) {
    return AnalyticTarget({Component{1.0, std::move(mean), std::move(var)}});
  }

  static AnalyticTarget gmm(std::vector<Component> components) {
    return AnalyticTarget(std::move(components));
  }

  explicit AnalyticTarget(std::vector<Component> components)
      : components_(std::move(components)) {
    if (components_.empty()) throw std::invalid_argument("AnalyticTarget: no components");
    double wsum = 0.0;
    for (const Component& c : components_) {
      if (c.mean.size() != components_[0].mean.size())
        throw std::invalid_argument("AnalyticTarget: component dims differ");
      for (std::size_t j = 0; j < c.var.size(); ++j)
        if (!(c.var[j] > 0.0)) throw std::invalid_argument("AnalyticTarget: var must be > 0");
      wsum += c.weight;
    }
    if (std::abs(wsum - 1.0) > 1e-9)
      throw std::invalid_argument("AnalyticTarget: weights must sum to 1");
  }

  std::size_t dim() const override { return components_[0].mean.size(); }
  const std::vector<Component>& components() const { return components_; }

  double log_density_unnormalized(std::span<const double> x) const override {
    if (components_.size() == 1) return component_logpdf(0, x);
    // log-sum-exp over weighted components
    double mx = -std::numeric_limits<double>::infinity();
    std::vector<double> terms(components_.size());
    for (std::size_t k = 0; k < components_.size(); ++k) {
      terms[k] = std::log(components_[k].weight) + component_logpdf(k, x);
      mx = std::max(mx, terms[k]);
    }
    double s = 0.0;
    for (double t : terms) s += std::exp(t - mx);
    return mx + std::log(s);
  }

  Tensor grad_log_density(std::span<const double> x) const override {
    Tensor g = Tensor::zeros({dim()});
    if (components_.size() == 1) {
      const Component& c = components_[0];
      for (std::size_t j = 0; j < dim(); ++j) g[j] = (c.mean[j] - x[j]) / c.var[j];
      return g;
    }
    // responsibility-weighted component scores
    std::vector<double> logits(components_.size());
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < components_.size(); ++k) {
      logits[k] = std::log(components_[k].weight) + component_logpdf(k, x);
      mx = std::max(mx, logits[k]);
    }
    double z = 0.0;
    for (double l : logits) z += std::exp(l - mx);
    for (std::size_t k = 0; k < components_.size(); ++k) {
      double resp = std::exp(logits[k] - mx) / z;
      const Component& c = components_[k];
      for (std::size_t j = 0; j < dim(); ++j) g[j] += resp * (c.mean[j] - x[j]) / c.var[j];
    }
    return g;
  }

 private:
  double component_logpdf(std::size_t k, std::span<const double> x) const {
    const Component& c = components_[k];
    double lp = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      double d = x[j] - c.mean[j];
      lp += -0.5 * (d * d / c.var[j] + std::log(2.0 * M_PI * c.var[j]));
    }
    return lp;
  }

  std::vector<Component> components_;
};

/// Exact i.i.d. samples from an analytic target.
inline ParticleSet sample_analytic(const AnalyticTarget& target, std::size_t n,
                                   std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("sample_analytic: n must be >= 1");
  Rng rng(seed);
  const auto& comps = target.components();
  std::vector<double> weights;
  for (const auto& c : comps) weights.push_back(c.weight);
  Tensor pts = Tensor::zeros({n, target.dim()});
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t k = comps.size() == 1 ? 0 : rng.categorical(weights);
    for (std::size_t j = 0; j < target.dim(); ++j)
      pts.at(i, j) = comps[k].mean[j] + std::sqrt(comps[k].var[j]) * rng.normal();
  }
  return ParticleSet(std::move(pts));
}

// ---------------------------------------------------------------------------
// Autoencoder energy:  φ(x,θ) = ‖x - D(E(x;θ);θ)‖   (unsquared L2)
// ---------------------------------------------------------------------------

class AutoencoderEnergy : public EnergyModel {
 public:
  AutoencoderEnergy(Mlp encoder, Mlp decoder)
      : encoder_(std::move(encoder)), decoder_(std::move(decoder)) {
    if (encoder_.in_dim() != decoder_.out_dim() || encoder_.out_dim() != decoder_.in_dim())
      throw std::invalid_argument("AutoencoderEnergy: D∘E must map R^d -> R^d");
  }

  std::size_t dim() const override { return encoder_.in_dim(); }
  std::size_t code_dim() const { return encoder_.out_dim(); }
  const Mlp& encoder() const { return encoder_; }
  const Mlp& decoder() const { return decoder_; }

  std::size_t theta_count() const override {
    return encoder_.param_count() + decoder_.param_count();
  }

  std::vector<double> phi_batch(const Tensor& points,
                                const std::vector<int>* labels) const override {
    check_labels(labels, points.rows());
    Graph g = build(points, labels);
    const Tensor& v = g.tape.value(g.phi_rows);
    return {v.data(), v.data() + v.size()};
  }

  Tensor score_batch(const Tensor& points, const std::vector<int>* labels,
                     std::vector<std::uint8_t>* degenerate = nullptr) const override {
    check_labels(labels, points.rows());
    Graph g = build(points, labels);
    Tensor seed = Tensor::full({points.rows()}, 1.0);
    g.tape.backward_seeded(g.phi_rows, seed);
    Tensor score = g.tape.adjoint(g.x);
    score *= -1.0;
    const Tensor& res_norm = g.tape.value(g.residual_norms);
    if (degenerate) degenerate->assign(points.rows(), 0);
    for (std::size_t r = 0; r < points.rows(); ++r) {
      if (res_norm[r] < kDegenerateResidual) {
        for (std::size_t c = 0; c < points.cols(); ++c) score.at(r, c) = 0.0;
        if (degenerate) (*degenerate)[r] = 1;
      }
    }
    return score;
  }

  Tensor grad_theta_phi_mean(const Tensor& points,
                             const std::vector<int>* labels) const override {
    check_labels(labels, points.rows());
    Graph g = build(points, labels);
    Tensor seed = Tensor::full({points.rows()}, 1.0 / static_cast<double>(points.rows()));
    g.tape.backward_seeded(g.phi_rows, seed);
    return flatten_theta_adjoints(g);
  }

  Tensor get_theta() const override {
    Tensor flat = Tensor::zeros({theta_count()});
    std::size_t k = 0;
    append(flat, k, encoder_.flatten_params());
    append(flat, k, decoder_.flatten_params());
    return flat;
  }

  void set_theta(const Tensor& theta) override {
    if (theta.size() != theta_count())
      throw std::invalid_argument("AutoencoderEnergy: theta length mismatch");
    std::size_t k = 0;
    encoder_.set_params(slice(theta, k, encoder_.param_count()));
    decoder_.set_params(slice(theta, k, decoder_.param_count()));
  }

  bool theta_finite() const override {
    return encoder_.params_finite() && decoder_.params_finite();
  }

 protected:
  struct Graph {
    Tape tape;
    Var x, residual_norms, phi_rows;
    Mlp::OnTape enc, dec, head;
    bool has_head = false;
  };

  /// Builds the batched φ graph. Subclasses extend via head_terms.
  Graph build(const Tensor& points, const std::vector<int>* labels) const {
    if (points.cols() != dim())
      throw std::invalid_argument("energy: point dimension mismatch");
    Graph g;
    g.x = g.tape.input(points);
    g.enc = encoder_.forward_on(g.tape, g.x);
    g.dec = decoder_.forward_on(g.tape, g.enc.out);
    Var residual = g.tape.sub(g.x, g.dec.out);
    g.residual_norms = g.tape.row_l2norm(residual);
    g.phi_rows = head_terms(g, labels);
    return g;
  }

  virtual Var head_terms(Graph& g, const std::vector<int>* labels) const {
    (void)labels;
    return g.residual_norms;
  }

  virtual void check_labels(const std::vector<int>* labels, std::size_t n) const {
    (void)n;
    if (labels) throw std::invalid_argument("AutoencoderEnergy: unexpected labels");
  }

  virtual Tensor flatten_theta_adjoints(const Graph& g) const {
    Tensor flat = Tensor::zeros({theta_count()});
    std::size_t k = 0;
    append(flat, k, encoder_.flatten_adjoints(g.tape, g.enc));
    append(flat, k, decoder_.flatten_adjoints(g.tape, g.dec));
    return flat;
  }

  static void append(Tensor& flat, std::size_t& k, const Tensor& part) {
    for (std::size_t j = 0; j < part.size(); ++j) flat[k++] = part[j];
  }

  static Tensor slice(const Tensor& flat, std::size_t& k, std::size_t len) {
    Tensor out = Tensor::zeros({len});
    for (std::size_t j = 0; j < len; ++j) out[j] = flat[k++];
    return out;
  }

  Mlp encoder_, decoder_;
};

// ---------------------------------------------------------------------------
// Joint label energy:
//   φ(x,y,θ) = ‖x - D(E(x))‖ + max[m, ce(y, head(E(x)))]
// where ce is the cross entropy of a fully connected output layer on the
// code. The max clamp is taken literally: when ce <= m the classification
// term contributes the constant m and its gradient vanishes.
// ---------------------------------------------------------------------------

class JointEnergy : public AutoencoderEnergy {
 public:
  JointEnergy(Mlp encoder, Mlp decoder, Mlp head, double margin)
      : AutoencoderEnergy(std::move(encoder), std::move(decoder)),
        head_(std::move(head)),
        margin_(margin) {
    if (margin_ < 0.0) throw std::invalid_argument("JointEnergy: margin must be >= 0");
    if (head_.in_dim() != code_dim())
      throw std::invalid_argument("JointEnergy: head input must be the code dim");
    if (head_.out_dim() < 2) throw std::invalid_argument("JointEnergy: need >= 2 classes");
  }

  bool conditional() const override { return true; }
  std::size_t num_classes() const override { return head_.out_dim(); }
  double margin() const { return margin_; }
  const Mlp& head() const { return head_; }

  std::size_t theta_count() const override {
    return AutoencoderEnergy::theta_count() + head_.param_count();
  }

  Tensor get_theta() const override {
    Tensor flat = Tensor::zeros({theta_count()});
    std::size_t k = 0;
    append(flat, k, encoder_.flatten_params());
    append(flat, k, decoder_.flatten_params());
    append(flat, k, head_.flatten_params());
    return flat;
  }

  void set_theta(const Tensor& theta) override {
    if (theta.size() != theta_count())
      throw std::invalid_argument("JointEnergy: theta length mismatch");
    std::size_t k = 0;
    encoder_.set_params(slice(theta, k, encoder_.param_count()));
    decoder_.set_params(slice(theta, k, decoder_.param_count()));
    head_.set_params(slice(theta, k, head_.param_count()));
  }

  bool theta_finite() const override {
    return AutoencoderEnergy::theta_finite() && head_.params_finite();
  }

 protected:
  Var head_terms(Graph& g, const std::vector<int>* labels) const override {
    g.head = head_.forward_on(g.tape, g.enc.out);
    g.has_head = true;
    Var ce = g.tape.cross_entropy_rows(g.head.out, *labels);
    Var clamped = g.tape.clamp_min(ce, margin_);
    return g.tape.add(g.residual_norms, clamped);
  }

  void check_labels(const std::vector<int>* labels, std::size_t n) const override {
    if (!labels) throw std::invalid_argument("JointEnergy: labels required");
    if (labels->size() != n) throw std::invalid_argument("JointEnergy: label count mismatch");
    for (int l : *labels)
      if (l < 0 || static_cast<std::size_t>(l) >= num_classes())
        throw std::invalid_argument("JointEnergy: label out of range");
  }

  Tensor flatten_theta_adjoints(const Graph& g) const override {
    Tensor flat = Tensor::zeros({theta_count()});
    std::size_t k = 0;
    append(flat, k, encoder_.flatten_adjoints(g.tape, g.enc));
    append(flat, k, decoder_.flatten_adjoints(g.tape, g.dec));
    append(flat, k, head_.flatten_adjoints(g.tape, g.head));
    return flat;
  }

 private:
  Mlp head_;
  double margin_;
};

/// TargetDensity view of an energy model (optionally pinned to one label),
/// so SVGD / amortized updates can drive particles toward p(x|θ).
class EnergyTargetAdapter : public TargetDensity {
 public:
  EnergyTargetAdapter(const EnergyModel& model, std::optional<int> label = {})
      : model_(model), label_(label) {
    if (model.conditional() != label.has_value())
      throw std::invalid_argument("EnergyTargetAdapter: label must match conditionality");
  }

  std::size_t dim() const override { return model_.dim(); }

  double log_density_unnormalized(std::span<const double> x) const override {
    return -model_.phi(x, label_);
  }

  Tensor grad_log_density(std::span<const double> x) const override {
    return grad_x_log_p(model_, x, label_);
  }

 private:
  const EnergyModel& model_;
  std::optional<int> label_;
};

}  // namespace stein
