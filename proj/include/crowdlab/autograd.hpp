#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "crowdlab/tensor.hpp"

namespace crowdlab::nn {

// Reverse-mode autodiff over Tensor values. A Var is a handle to a graph node;
// ops build the graph eagerly and backward() runs one reverse topological
// sweep from a scalar root. Leaf gradients accumulate across backward calls
// until cleared, which is what batch accumulation relies on.
struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily, same shape as value
  bool requires_grad = false;
  bool is_leaf = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backfn;  // scatters node.grad into parents

  Tensor& grad_storage() {
    // numel check matters for rank-0: shape {} matches a default Tensor's.
    if (grad.shape() != value.shape() || grad.numel() != value.numel())
      grad = Tensor(value.shape());
    return grad;
  }
};

class Var {
 public:
  Var() = default;

  static Var leaf(Tensor value, bool requires_grad) {
    Var v;
    v.n_ = std::make_shared<Node>();
    v.n_->value = std::move(value);
    v.n_->requires_grad = requires_grad;
    v.n_->is_leaf = true;
    return v;
  }

  static Var constant(Tensor value) { return leaf(std::move(value), false); }
  static Var constant(double v) { return leaf(Tensor::scalar(v), false); }

  static Var from_node(std::shared_ptr<Node> n) {
    Var v;
    v.n_ = std::move(n);
    return v;
  }

  bool defined() const { return n_ != nullptr; }
  const Tensor& value() const { return n_->value; }
  Tensor& mutable_value() { return n_->value; }
  Tensor& grad() const { return n_->grad_storage(); }
  bool requires_grad() const { return n_->requires_grad; }
  bool is_leaf() const { return n_->is_leaf; }
  void zero_grad() const { n_->grad.fill(0.0); }

  std::shared_ptr<Node> node() const { return n_; }

  // Backpropagate from this scalar root; seeds d(root)/d(root) = 1.
  void backward() const;

 private:
  std::shared_ptr<Node> n_;
};

namespace ops {

// -- pointwise -------------------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var add_scalar(const Var& a, double c);
Var mul_scalar(const Var& a, double c);
Var neg(const Var& a);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var tanh_(const Var& a);
Var exp_(const Var& a);
Var log_(const Var& a);
Var sqrt_(const Var& a);
Var abs_(const Var& a);
Var square(const Var& a);
Var softplus(const Var& a);

// -- reductions ------------------------------------------------------------
Var sum(const Var& a);
Var mean(const Var& a);

// -- channel helpers for (C,H,W) with per-channel vector (C) ---------------
Var channel_mean(const Var& chw);             // -> (C)
Var add_channel(const Var& chw, const Var& c);  // x[c,:,:] + v[c]
Var mul_channel(const Var& chw, const Var& c);  // x[c,:,:] * v[c]
Var slice_channels(const Var& chw, int c0, int c1);  // [c0,c1) -> (c1-c0,H,W)

// -- normalization ---------------------------------------------------------
// Per-channel (x - mean) / sqrt(var + eps) * gamma + beta over spatial dims.
Var instance_norm(const Var& chw, const Var& gamma, const Var& beta,
                  double eps = 1e-5);

// -- convolution -----------------------------------------------------------
// x: (Cin,H,W), w: (Cout,Cin,kh,kw), bias: (Cout) or undefined Var.
Var conv2d(const Var& x, const Var& w, const Var& bias, int stride, int pad);
// Transposed convolution (adjoint of conv2d). w: (Cin,Cout,kh,kw).
// Output (Cout, (H-1)*stride - 2*pad + kh, ...).
Var conv2d_transpose(const Var& x, const Var& w, const Var& bias, int stride,
                     int pad);

// -- spatial recurrence ----------------------------------------------------
// One directional pass of the spatial encoder: rows (or columns) are visited
// sequentially and each receives a rectified 1-D convolution of its already
// updated predecessor: h[i] = x[i] + relu(conv1d(h[i-1], w)).
// dir: 0 down, 1 up, 2 left-to-right, 3 right-to-left. w: (C,C,k), k odd.
enum class PassDir { kDown = 0, kUp = 1, kLeftRight = 2, kRightLeft = 3 };
Var directional_pass(const Var& x, const Var& w, PassDir dir);

// -- classification helpers ------------------------------------------------
// Numerically stable per-pixel log-softmax over the channel dimension.
Var log_softmax_c(const Var& chw);

// Stops gradient: value is shared, graph is cut.
Var detach(const Var& a);

}  // namespace ops

// Relative-error central finite-difference check of d(loss)/d(leaf) at one
// flat coordinate. Returns {analytic, numeric}.
struct FdProbe {
  double analytic;
  double numeric;
};
FdProbe fd_probe(const std::function<Var()>& build_loss, const Var& leaf,
                 std::size_t flat_index, double h);

}  // namespace crowdlab::nn
