// SPDX-License-Identifier: Apache-2.0
//
// Small reverse-mode tape over double-precision vectors and matrices. The
// heads carry hand-written backward passes; the tape is the generic route
// used to cross-check them and to differentiate ad-hoc compositions.
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "fgmatch/errors.hpp"
#include "fgmatch/numcore.hpp"

namespace fgmatch {

class GradTape {
 public:
  /// Handle to a node recorded on a tape.
  struct Var {
    std::size_t index = 0;
    const GradTape* tape = nullptr;
  };

  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  Var parameter(const BasicVector<double>& v) { return leaf(v.values(), v.dim(), 1); }
  Var parameter(const BasicMatrix<double>& m) {
    return leaf({m.span().begin(), m.span().end()}, m.rows(), m.cols());
  }
  Var constant(const BasicVector<double>& v) { return leaf(v.values(), v.dim(), 1); }
  Var constant(const BasicMatrix<double>& m) {
    return leaf({m.span().begin(), m.span().end()}, m.rows(), m.cols());
  }
  Var constant(double x) { return leaf({x}, 1, 1); }

  Var matvec(Var w, Var x) {
    const Node& nw = node(w);
    const Node& nx = node(x);
    if (nx.cols != 1 || nw.cols != nx.rows) throw UsageError("tape matvec: dimension mismatch");
    const std::size_t rows = nw.rows, cols = nw.cols;
    std::vector<double> out(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out[r] += nw.value[r * cols + c] * nx.value[c];
    return push(std::move(out), rows, 1, {w.index, x.index}, [rows, cols](GradTape& t, Node& self) {
      Node& a = t.nodes_[self.parents[0]];
      Node& b = t.nodes_[self.parents[1]];
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
          a.grad[r * cols + c] += self.grad[r] * b.value[c];
          b.grad[c] += self.grad[r] * a.value[r * cols + c];
        }
    });
  }

  Var add(Var a, Var b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (na.rows != nb.rows || na.cols != nb.cols) throw UsageError("tape add: shape mismatch");
    std::vector<double> out(na.value.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = na.value[i] + nb.value[i];
    return push(std::move(out), na.rows, na.cols, {a.index, b.index}, [](GradTape& t, Node& self) {
      for (int p = 0; p < 2; ++p) {
        Node& in = t.nodes_[self.parents[p]];
        for (std::size_t i = 0; i < self.grad.size(); ++i) in.grad[i] += self.grad[i];
      }
    });
  }

  Var scale(Var a, double k) {
    const Node& na = node(a);
    std::vector<double> out(na.value);
    for (double& x : out) x *= k;
    return push(std::move(out), na.rows, na.cols, {a.index}, [k](GradTape& t, Node& self) {
      Node& in = t.nodes_[self.parents[0]];
      for (std::size_t i = 0; i < self.grad.size(); ++i) in.grad[i] += k * self.grad[i];
    });
  }

  Var dot(Var a, Var b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (na.cols != 1 || nb.cols != 1 || na.rows != nb.rows) throw UsageError("tape dot: dimension mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < na.rows; ++i) acc += na.value[i] * nb.value[i];
    return push({acc}, 1, 1, {a.index, b.index}, [](GradTape& t, Node& self) {
      Node& x = t.nodes_[self.parents[0]];
      Node& y = t.nodes_[self.parents[1]];
      for (std::size_t i = 0; i < x.value.size(); ++i) {
        x.grad[i] += self.grad[0] * y.value[i];
        y.grad[i] += self.grad[0] * x.value[i];
      }
    });
  }

  Var cosine(Var a, Var b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (na.cols != 1 || nb.cols != 1 || na.rows != nb.rows) throw UsageError("tape cosine: dimension mismatch");
    const double c = fgmatch::cosine(std::span<const double>(na.value), std::span<const double>(nb.value));
    return push({c}, 1, 1, {a.index, b.index}, [](GradTape& t, Node& self) {
      Node& x = t.nodes_[self.parents[0]];
      Node& y = t.nodes_[self.parents[1]];
      cosine_backward(std::span<const double>(x.value), std::span<const double>(y.value), self.grad[0],
                      std::span<double>(x.grad), std::span<double>(y.grad));
    });
  }

  Var tanh(Var a) {
    const Node& na = node(a);
    std::vector<double> out(na.value.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(na.value[i]);
    return push(std::move(out), na.rows, na.cols, {a.index}, [](GradTape& t, Node& self) {
      Node& in = t.nodes_[self.parents[0]];
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        in.grad[i] += self.grad[i] * (1.0 - self.value[i] * self.value[i]);
    });
  }

  Var sigmoid(Var a) {
    const Node& na = node(a);
    std::vector<double> out(na.value.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fgmatch::sigmoid(na.value[i]);
    return push(std::move(out), na.rows, na.cols, {a.index}, [](GradTape& t, Node& self) {
      Node& in = t.nodes_[self.parents[0]];
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        in.grad[i] += self.grad[i] * self.value[i] * (1.0 - self.value[i]);
    });
  }

  Var softmax(Var a) {
    const Node& na = node(a);
    if (na.cols != 1) throw UsageError("tape softmax: expects a vector");
    const auto s = fgmatch::softmax(BasicVector<double>(na.value));
    return push(s.values(), na.rows, 1, {a.index}, [](GradTape& t, Node& self) {
      Node& in = t.nodes_[self.parents[0]];
      double inner = 0.0;
      for (std::size_t i = 0; i < self.value.size(); ++i) inner += self.grad[i] * self.value[i];
      for (std::size_t i = 0; i < self.value.size(); ++i)
        in.grad[i] += self.value[i] * (self.grad[i] - inner);
    });
  }

  /// Selects entry i of a vector (or flat entry of a matrix) as a scalar node.
  Var element(Var a, std::size_t i) {
    const Node& na = node(a);
    if (i >= na.value.size()) throw UsageError("tape element: index out of range");
    return push({na.value[i]}, 1, 1, {a.index}, [i](GradTape& t, Node& self) {
      t.nodes_[self.parents[0]].grad[i] += self.grad[0];
    });
  }

  std::span<const double> value(Var v) const { return node(v).value; }

  double scalar(Var v) const {
    const Node& n = node(v);
    if (n.value.size() != 1) throw UsageError("tape: node is not a scalar");
    return n.value[0];
  }

  /// Reverse sweep from a scalar root. Each node is visited once, in reverse
  /// recording order. A tape can be swept only once.
  void backward(Var root) {
    const Node& r = node(root);
    if (r.value.size() != 1) throw UsageError("tape backward: root must be a scalar");
    if (swept_) throw UsageError("tape backward: tape already consumed");
    swept_ = true;
    for (Node& n : nodes_) n.grad.assign(n.value.size(), 0.0);
    nodes_[root.index].grad[0] = 1.0;
    for (std::size_t i = root.index + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward) n.backward(*this, n);
    }
  }

  std::span<const double> gradient(Var v) const {
    if (!swept_) throw UsageError("tape gradient: backward has not been run");
    return node(v).grad;
  }

 private:
  struct Node {
    std::vector<double> value;
    std::size_t rows = 1, cols = 1;
    std::vector<std::size_t> parents;
    std::function<void(GradTape&, Node&)> backward;
    std::vector<double> grad;
  };

  const Node& node(Var v) const {
    if (v.tape != this || v.index >= nodes_.size()) throw UsageError("tape: variable belongs to another tape");
    return nodes_[v.index];
  }

  Var leaf(std::vector<double> value, std::size_t rows, std::size_t cols) {
    return push(std::move(value), rows, cols, {}, nullptr);
  }

  Var push(std::vector<double> value, std::size_t rows, std::size_t cols, std::vector<std::size_t> parents,
           std::function<void(GradTape&, Node&)> backward) {
    if (swept_) throw UsageError("tape: cannot record after backward");
    nodes_.push_back(Node{std::move(value), rows, cols, std::move(parents), std::move(backward), {}});
    return Var{nodes_.size() - 1, this};
  }

  std::vector<Node> nodes_;
  bool swept_ = false;
};

/// One differentiable input to grad_of: a vector or matrix, flattened.
struct GradInput {
  std::vector<double> values;
  std::size_t rows = 1;
  std::size_t cols = 1;

  static GradInput of(const BasicVector<double>& v) { return {v.values(), v.dim(), 1}; }
  static GradInput of(const BasicMatrix<double>& m) {
    return {{m.span().begin(), m.span().end()}, m.rows(), m.cols()};
  }
};

struct GradResult {
  double value = 0.0;
  std::vector<std::vector<double>> gradients;  // one per input, same flat layout
};

/// Records f on a fresh tape with `inputs` registered as parameters and
/// returns f's value and its gradient with respect to every input.
/// f : (GradTape&, std::span<const GradTape::Var>) -> GradTape::Var (scalar).
template <class F>
GradResult grad_of(F&& f, std::span<const GradInput> inputs) {
  GradTape tape;
  std::vector<GradTape::Var> vars;
  vars.reserve(inputs.size());
  for (const auto& in : inputs) {
    if (in.cols == 1) {
      vars.push_back(tape.parameter(BasicVector<double>(in.values)));
    } else {
      vars.push_back(tape.parameter(BasicMatrix<double>(in.rows, in.cols, in.values)));
    }
  }
  const GradTape::Var root = std::forward<F>(f)(tape, std::span<const GradTape::Var>(vars));
  GradResult out;
  out.value = tape.scalar(root);
  tape.backward(root);
  for (const auto& v : vars) {
    const auto g = tape.gradient(v);
    out.gradients.emplace_back(g.begin(), g.end());
  }
  return out;
}

}  // namespace fgmatch
