#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "stein/tensor.hpp"

namespace stein {

/// Handle into a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode differentiation tape over dense f64 tensors.
///
/// Nodes are appended in evaluation order, so creation order is a
/// topological order; the backward sweep walks nodes once, in reverse.
/// A tape is rebuilt per forward pass and is single-threaded. Repeated
/// seeded backward passes over the same tape are allowed (adjoints reset
/// on every call).
class Tape {
 public:
  enum class Op : std::uint8_t {
    Leaf,
    Add,
    Sub,
    Mul,        // elementwise
    Scale,      // by compile-time constant c
    MatMul,     // [n×k]·[k×m]
    AddRowVec,  // [n×m] + broadcast row [m]
    Tanh,
    Relu,       // subgradient at 0 is 0
    Sigmoid,
    Exp,
    Sum,        // all entries -> shape {1}
    RowL2Norm,  // [n×d] -> [n], unsquared Euclidean norm per row
    CrossEntropyRows,  // logits [n×K], labels [n] -> [n]
    ClampMin,   // max(c, x) elementwise
  };

  std::size_t size() const { return nodes_.size(); }

  Var leaf(Tensor v) { return push(Op::Leaf, -1, -1, 0.0, std::move(v)); }

  /// Leaf from external input: validates finiteness.
  Var input(Tensor v) {
    if (!v.all_finite()) throw std::invalid_argument("Tape::input: non-finite entry");
    return leaf(std::move(v));
  }

  Var add(Var a, Var b) { return push(Op::Add, a.id, b.id, 0.0, value(a) + value(b)); }
  Var sub(Var a, Var b) { return push(Op::Sub, a.id, b.id, 0.0, value(a) - value(b)); }
  Var mul(Var a, Var b) { return push(Op::Mul, a.id, b.id, 0.0, hadamard(value(a), value(b))); }
  Var scale(Var a, double c) { return push(Op::Scale, a.id, -1, c, value(a) * c); }

  Var matmul_(Var a, Var b) {
    return push(Op::MatMul, a.id, b.id, 0.0, matmul(value(a), value(b)));
  }

  Var add_rowvec(Var a, Var b) {
    const Tensor& x = value(a);
    const Tensor& v = value(b);
    if (v.rank() != 1 || v.size() != x.cols())
      throw std::invalid_argument("add_rowvec: row vector length mismatch");
    Tensor y = x;
    for (std::size_t r = 0; r < y.rows(); ++r)
      for (std::size_t c = 0; c < y.cols(); ++c) y.at(r, c) += v[c];
    return push(Op::AddRowVec, a.id, b.id, 0.0, std::move(y));
  }

  Var tanh_(Var a) { return unary(Op::Tanh, a, [](double x) { return std::tanh(x); }); }
  Var relu_(Var a) { return unary(Op::Relu, a, [](double x) { return x > 0.0 ? x : 0.0; }); }
  Var sigmoid_(Var a) {
    return unary(Op::Sigmoid, a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  }
  Var exp_(Var a) { return unary(Op::Exp, a, [](double x) { return std::exp(x); }); }

  Var sum(Var a) {
    Tensor y = Tensor::zeros({1});
    y[0] = value(a).sum();
    return push(Op::Sum, a.id, -1, 0.0, std::move(y));
  }

  Var row_l2norm(Var a) {
    const Tensor& x = value(a);
    Tensor y = Tensor::zeros({x.rows()});
    for (std::size_t r = 0; r < x.rows(); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < x.cols(); ++c) s += x.at(r, c) * x.at(r, c);
      y[r] = std::sqrt(s);
    }
    return push(Op::RowL2Norm, a.id, -1, 0.0, std::move(y));
  }

  Var cross_entropy_rows(Var logits, std::span<const int> labels) {
    const Tensor& z = value(logits);
    if (labels.size() != z.rows())
      throw std::invalid_argument("cross_entropy_rows: label count mismatch");
    Tensor y = Tensor::zeros({z.rows()});
    for (std::size_t r = 0; r < z.rows(); ++r) {
      int l = labels[r];
      if (l < 0 || static_cast<std::size_t>(l) >= z.cols())
        throw std::invalid_argument("cross_entropy_rows: label out of range");
      y[r] = logsumexp_row(z, r) - z.at(r, static_cast<std::size_t>(l));
    }
    Var v = push(Op::CrossEntropyRows, logits.id, -1, 0.0, std::move(y));
    nodes_[static_cast<std::size_t>(v.id)].labels.assign(labels.begin(), labels.end());
    return v;
  }

  Var clamp_min(Var a, double c) {
    Tensor y = value(a);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::max(c, y[i]);
    return push(Op::ClampMin, a.id, -1, c, std::move(y));
  }

  const Tensor& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }

  /// Backward from a scalar root with seed 1.
  void backward(Var root) {
    if (value(root).size() != 1)
      throw std::invalid_argument("Tape::backward: root is not scalar");
    Tensor seed = Tensor::full({1}, 1.0);
    backward_seeded(root, seed);
  }

  /// Backward with an arbitrary cotangent on `out`. Visits each node at most
  /// once, in reverse creation order.
  void backward_seeded(Var out, const Tensor& seed) {
    if (!value(out).same_shape(seed))
      throw std::invalid_argument("Tape::backward_seeded: seed shape mismatch");
    adj_.assign(nodes_.size(), Tensor{});
    adj_[static_cast<std::size_t>(out.id)] = seed;
    for (int i = out.id; i >= 0; --i) {
      if (adj_[static_cast<std::size_t>(i)].empty()) continue;
      propagate(static_cast<std::size_t>(i));
    }
  }

  /// Adjoint of a node after backward; zeros if the node is unreachable.
  Tensor adjoint(Var v) const {
    const Tensor& a = adj_[static_cast<std::size_t>(v.id)];
    if (a.empty()) return Tensor::zeros(value(v).shape());
    return a;
  }

  bool has_adjoint(Var v) const { return !adj_[static_cast<std::size_t>(v.id)].empty(); }

 private:
  struct Node {
    Op op;
    int a, b;
    double c;
    Tensor value;
    std::vector<int> labels;  // CrossEntropyRows only
  };

  template <class F>
  Var unary(Op op, Var a, F f) {
    Tensor y = value(a);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(y[i]);
    return push(op, a.id, -1, 0.0, std::move(y));
  }

  Var push(Op op, int a, int b, double c, Tensor v) {
    nodes_.push_back(Node{op, a, b, c, std::move(v), {}});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  static double logsumexp_row(const Tensor& z, std::size_t r) {
    double m = z.at(r, 0);
    for (std::size_t c = 1; c < z.cols(); ++c) m = std::max(m, z.at(r, c));
    double s = 0.0;
    for (std::size_t c = 0; c < z.cols(); ++c) s += std::exp(z.at(r, c) - m);
    return m + std::log(s);
  }

  Tensor& slot(int id, const Tensor& like) {
    Tensor& t = adj_[static_cast<std::size_t>(id)];
    if (t.empty()) t = Tensor::zeros(like.shape());
    return t;
  }

  void propagate(std::size_t i) {
    const Node& n = nodes_[i];
    const Tensor& g = adj_[i];
    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::Add: {
        slot(n.a, nodes_[static_cast<std::size_t>(n.a)].value) += g;
        slot(n.b, nodes_[static_cast<std::size_t>(n.b)].value) += g;
        break;
      }
      case Op::Sub: {
        slot(n.a, nodes_[static_cast<std::size_t>(n.a)].value) += g;
        slot(n.b, nodes_[static_cast<std::size_t>(n.b)].value) -= g;
        break;
      }
      case Op::Mul: {
        const Tensor& va = nodes_[static_cast<std::size_t>(n.a)].value;
        const Tensor& vb = nodes_[static_cast<std::size_t>(n.b)].value;
        Tensor& ga = slot(n.a, va);
        Tensor& gb = slot(n.b, vb);
        for (std::size_t k = 0; k < g.size(); ++k) {
          ga[k] += g[k] * vb[k];
          gb[k] += g[k] * va[k];
        }
        break;
      }
      case Op::Scale: {
        Tensor& ga = slot(n.a, nodes_[static_cast<std::size_t>(n.a)].value);
        for (std::size_t k = 0; k < g.size(); ++k) ga[k] += n.c * g[k];
        break;
      }
      case Op::MatMul: {
        const Tensor& va = nodes_[static_cast<std::size_t>(n.a)].value;
        const Tensor& vb = nodes_[static_cast<std::size_t>(n.b)].value;
        Tensor& ga = slot(n.a, va);
        Tensor& gb = slot(n.b, vb);
        detail::as_matrix(ga).noalias() +=
            detail::as_matrix(g) * detail::as_matrix(vb).transpose();
        detail::as_matrix(gb).noalias() +=
            detail::as_matrix(va).transpose() * detail::as_matrix(g);
        break;
      }
      case Op::AddRowVec: {
        const Tensor& va = nodes_[static_cast<std::size_t>(n.a)].value;
        Tensor& ga = slot(n.a, va);
        ga += g;
        Tensor& gb = slot(n.b, nodes_[static_cast<std::size_t>(n.b)].value);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g.at(r, c);
        break;
      }
      case Op::Tanh: {
        Tensor& ga = slot(n.a, nodes_[static_cast<std::size_t>(n.a)].value);
        for (std::size_t k = 0; k < g.size(); ++k)
          ga[k] += g[k] * (1.0 - n.value[k] * n.value[k]);
        break;
      }
      case Op::Relu: {
        const Tensor& va = nodes_[static_cast<std::size_t>(n.a)].value;
        Tensor& ga = slot(n.a, va);
        for (std::size_t k = 0; k < g.size(); ++k)
          if (va[k] > 0.0) ga[k] += g[k];
        break;
      }
      case Op::Sigmoid: {
        Tensor& ga = slot(n.a, nodes_[static_cast<std::size_t>(n.a)].value);
        for (std::size_t k = 0; k < g.size(); ++k)
          ga[k] += g[k] * n.value[k] * (1.0 - n.value[k]);
        break;
      }
      case Op::Exp: {
        Tensor& ga = slot(n.a, nodes_[static_cast<std::size_t>(n.a)].value);
        for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] * n.value[k];
        break;
      }
      case Op::Sum: {
        Tensor& ga = slot(n.a, nodes_[static_cast<std::size_t>(n.a)].value);
        double s = g[0];
        for (std::size_t k = 0; k < ga.size(); ++k) ga[k] += s;
        break;
      }
      case Op::RowL2Norm: {
        const Tensor& va = nodes_[static_cast<std::size_t>(n.a)].value;
        Tensor& ga = slot(n.a, va);
        for (std::size_t r = 0; r < va.rows(); ++r) {
          double nr = n.value[r];
          if (nr <= 0.0) continue;  // exact zero residual: no defined direction
          double w = g[r] / nr;
          for (std::size_t c = 0; c < va.cols(); ++c) ga.at(r, c) += w * va.at(r, c);
        }
        break;
      }
      case Op::CrossEntropyRows: {
        const Tensor& z = nodes_[static_cast<std::size_t>(n.a)].value;
        Tensor& ga = slot(n.a, z);
        for (std::size_t r = 0; r < z.rows(); ++r) {
          double m = z.at(r, 0);
          for (std::size_t c = 1; c < z.cols(); ++c) m = std::max(m, z.at(r, c));
          double s = 0.0;
          for (std::size_t c = 0; c < z.cols(); ++c) s += std::exp(z.at(r, c) - m);
          for (std::size_t c = 0; c < z.cols(); ++c) {
            double soft = std::exp(z.at(r, c) - m) / s;
            double onehot = (static_cast<int>(c) == n.labels[r]) ? 1.0 : 0.0;
            ga.at(r, c) += g[r] * (soft - onehot);
          }
        }
        break;
      }
      case Op::ClampMin: {
        const Tensor& va = nodes_[static_cast<std::size_t>(n.a)].value;
        Tensor& ga = slot(n.a, va);
        for (std::size_t k = 0; k < g.size(); ++k)
          if (va[k] > n.c) ga[k] += g[k];
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  std::vector<Tensor> adj_;
};

}  // namespace stein
