#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "stein/rng.hpp"
#include "stein/tape.hpp"
#include "stein/tensor.hpp"

namespace stein {

enum class Act { Identity, Tanh, Relu, Sigmoid };

inline const char* act_name(Act a) {
  switch (a) {
    case Act::Identity: return "identity";
    case Act::Tanh: return "tanh";
    case Act::Relu: return "relu";
    case Act::Sigmoid: return "sigmoid";
  }
  return "identity";
}

inline Act act_from_name(const std::string& s) {
  if (s == "identity") return Act::Identity;
  if (s == "tanh") return Act::Tanh;
  if (s == "relu") return Act::Relu;
  if (s == "sigmoid") return Act::Sigmoid;
  throw std::invalid_argument("unknown activation: " + s);
}

struct LayerSpec {
  std::size_t in = 0, out = 0;
  Act act = Act::Identity;
  bool bias = true;
};

/// Feed-forward network over f64. Batch inputs are [batch×in]; layer k maps
/// with x·W + b, W stored [in×out] row-major. An empty b means the layer
/// has no bias term.
///
/// Parameter flattening order (fixed; optimizer state, vjp_params and
/// checkpoints all rely on it): for each layer in order, W row-major
/// (in×out), then b when the layer has one.
class Mlp {
 public:
  struct Layer {
    Tensor w, b;
    Act act = Act::Identity;

    bool has_bias() const { return !b.empty(); }
  };

  Mlp() = default;

  explicit Mlp(std::vector<Layer> layers) : layers_(std::move(layers)) { check_chain(); }

  /// Weights i.i.d. N(0, stddev²), biases 0, drawn layer by layer in
  /// flattening order so a fixed seed reproduces byte-identical weights.
  static Mlp init_gaussian(std::span<const LayerSpec> specs, double stddev, Rng& rng) {
    if (stddev <= 0.0) throw std::invalid_argument("init_gaussian: stddev must be > 0");
    std::vector<Layer> layers;
    layers.reserve(specs.size());
    for (const LayerSpec& s : specs) {
      Layer l;
      l.w = rng.normal_tensor({s.in, s.out}, 0.0, stddev);
      l.b = s.bias ? Tensor::zeros({s.out}) : Tensor{};
      l.act = s.act;
      layers.push_back(std::move(l));
    }
    return Mlp(std::move(layers));
  }

  static Mlp zeros(std::span<const LayerSpec> specs) {
    std::vector<Layer> layers;
    for (const LayerSpec& s : specs)
      layers.push_back(Layer{Tensor::zeros({s.in, s.out}),
                             s.bias ? Tensor::zeros({s.out}) : Tensor{}, s.act});
    return Mlp(std::move(layers));
  }

  std::size_t in_dim() const { return layers_.front().w.rows(); }
  std::size_t out_dim() const { return layers_.back().w.cols(); }
  std::size_t layer_count() const { return layers_.size(); }
  const Layer& layer(std::size_t i) const { return layers_[i]; }
  Layer& layer(std::size_t i) { return layers_[i]; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const Layer& l : layers_) n += l.w.size() + l.b.size();
    return n;
  }

  std::vector<LayerSpec> specs() const {
    std::vector<LayerSpec> s;
    for (const Layer& l : layers_) s.push_back({l.w.rows(), l.w.cols(), l.act, l.has_bias()});
    return s;
  }

  Tensor forward(const Tensor& input) const {
    check_input(input);
    Tensor x = input;
    for (const Layer& l : layers_) {
      Tensor y = matmul(x, l.w);
      if (l.has_bias())
        for (std::size_t r = 0; r < y.rows(); ++r)
          for (std::size_t c = 0; c < y.cols(); ++c) y.at(r, c) += l.b[c];
      apply_act(y, l.act);
      x = std::move(y);
    }
    return x;
  }

  /// On-tape forward; parameters become fresh leaves each call.
  struct OnTape {
    Var out;
    std::vector<std::pair<Var, Var>> params;  // (w, b) per layer
  };

  OnTape forward_on(Tape& tape, Var input) const {
    const Tensor& in = tape.value(input);
    if (in.cols() != in_dim())
      throw std::invalid_argument("Mlp::forward_on: input columns != in_dim");
    OnTape r;
    Var x = input;
    for (const Layer& l : layers_) {
      Var w = tape.leaf(l.w);
      Var b = l.has_bias() ? tape.leaf(l.b) : Var{};
      r.params.emplace_back(w, b);
      Var y = tape.matmul_(x, w);
      if (b.valid()) y = tape.add_rowvec(y, b);
      switch (l.act) {
        case Act::Identity: break;
        case Act::Tanh: y = tape.tanh_(y); break;
        case Act::Relu: y = tape.relu_(y); break;
        case Act::Sigmoid: y = tape.sigmoid_(y); break;
      }
      x = y;
    }
    r.out = x;
    return r;
  }

  /// Gathers per-layer parameter adjoints into a flat vector (flattening
  /// order above). Call after a backward pass on `tape`.
  Tensor flatten_adjoints(const Tape& tape, const OnTape& on) const {
    Tensor flat = Tensor::zeros({param_count()});
    std::size_t k = 0;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      Tensor gw = tape.adjoint(on.params[i].first);
      for (std::size_t j = 0; j < gw.size(); ++j) flat[k++] = gw[j];
      if (on.params[i].second.valid()) {
        Tensor gb = tape.adjoint(on.params[i].second);
        for (std::size_t j = 0; j < gb.size(); ++j) flat[k++] = gb[j];
      }
    }
    return flat;
  }

  Tensor flatten_params() const {
    Tensor flat = Tensor::zeros({param_count()});
    std::size_t k = 0;
    for (const Layer& l : layers_) {
      for (std::size_t j = 0; j < l.w.size(); ++j) flat[k++] = l.w[j];
      for (std::size_t j = 0; j < l.b.size(); ++j) flat[k++] = l.b[j];
    }
    return flat;
  }

  void set_params(const Tensor& flat) {
    if (flat.size() != param_count())
      throw std::invalid_argument("Mlp::set_params: length mismatch");
    std::size_t k = 0;
    for (Layer& l : layers_) {
      for (std::size_t j = 0; j < l.w.size(); ++j) l.w[j] = flat[k++];
      for (std::size_t j = 0; j < l.b.size(); ++j) l.b[j] = flat[k++];
    }
  }

  bool params_finite() const {
    for (const Layer& l : layers_)
      if (!l.w.all_finite() || !l.b.all_finite()) return false;
    return true;
  }

 private:
  void check_chain() const {
    if (layers_.empty()) throw std::invalid_argument("Mlp: no layers");
    for (std::size_t i = 0; i + 1 < layers_.size(); ++i)
      if (layers_[i].w.cols() != layers_[i + 1].w.rows())
        throw std::invalid_argument("Mlp: layer dimension chain broken");
  }

  void check_input(const Tensor& input) const {
    if (input.cols() != in_dim())
      throw std::invalid_argument("Mlp::forward: input columns != in_dim");
    if (!input.all_finite()) throw std::invalid_argument("Mlp::forward: non-finite input");
  }

  static void apply_act(Tensor& y, Act a) {
    switch (a) {
      case Act::Identity: return;
      case Act::Tanh:
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::tanh(y[i]);
        return;
      case Act::Relu:
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = y[i] > 0.0 ? y[i] : 0.0;
        return;
      case Act::Sigmoid:
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = 1.0 / (1.0 + std::exp(-y[i]));
        return;
    }
  }

  std::vector<Layer> layers_;
};

/// Scalar-head selection for the whole-net gradient helpers below.
enum class Head { Scalar, Sum };

namespace detail {
inline Var reduce_head(Tape& tape, Var out, Head head) {
  if (head == Head::Sum) return tape.sum(out);
  if (tape.value(out).size() != 1)
    throw std::invalid_argument("scalar head required: net output is not a single scalar");
  return tape.sum(out);  // sum of a single entry: exact identity reduction
}
}  // namespace detail

/// d(head(net(input)))/d(input), same shape as input.
inline Tensor grad_wrt_input(const Mlp& net, const Tensor& input, Head head = Head::Scalar) {
  Tape tape;
  Var x = tape.input(input);
  Mlp::OnTape on = net.forward_on(tape, x);
  tape.backward(detail::reduce_head(tape, on.out, head));
  return tape.adjoint(x);
}

/// d(head(net(input)))/d(params), flat (see Mlp flattening order).
inline Tensor grad_wrt_params(const Mlp& net, const Tensor& input, Head head = Head::Scalar) {
  Tape tape;
  Var x = tape.input(input);
  Mlp::OnTape on = net.forward_on(tape, x);
  tape.backward(detail::reduce_head(tape, on.out, head));
  return net.flatten_adjoints(tape, on);
}

/// Jᵀ·cotangent where J = ∂(net output)/∂(params); cotangent must match the
/// output shape. With a batch input this is the batch-summed product.
inline Tensor vjp_params(const Mlp& net, const Tensor& input, const Tensor& cotangent) {
  Tape tape;
  Var x = tape.input(input);
  Mlp::OnTape on = net.forward_on(tape, x);
  if (!tape.value(on.out).same_shape(cotangent))
    throw std::invalid_argument("vjp_params: cotangent shape mismatch");
  tape.backward_seeded(on.out, cotangent);
  return net.flatten_adjoints(tape, on);
}

/// Like vjp_params but for the input: Jᵀ·cotangent with J = ∂output/∂input.
inline Tensor vjp_input(const Mlp& net, const Tensor& input, const Tensor& cotangent) {
  Tape tape;
  Var x = tape.input(input);
  Mlp::OnTape on = net.forward_on(tape, x);
  if (!tape.value(on.out).same_shape(cotangent))
    throw std::invalid_argument("vjp_input: cotangent shape mismatch");
  tape.backward_seeded(on.out, cotangent);
  return tape.adjoint(x);
}

}  // namespace stein
