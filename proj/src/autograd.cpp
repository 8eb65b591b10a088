#include "crowdlab/autograd.hpp"

#include <Eigen/Core>

#include <cmath>
#include <unordered_set>
#include <utility>

namespace crowdlab::nn {

using RMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RMat>;
using MapCM = Eigen::Map<const RMat>;

namespace {

Var make(Tensor value, std::vector<Var> parents,
         std::function<void(Node&)> backfn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  bool rq = false;
  n->parents.reserve(parents.size());
  for (auto& p : parents) {
    rq = rq || p.node()->requires_grad;
    n->parents.push_back(p.node());
  }
  n->requires_grad = rq;
  if (rq) n->backfn = std::move(backfn);
  return Var::from_node(std::move(n));
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value()))
    throw ShapeError(cat(op, ": shape mismatch ", shape_str(a.value()), " vs ",
                         shape_str(b.value())));
}

// Elementwise unary helper: out[i] = f(x[i]); dx[i] += g[i] * dfdx(x[i], out[i]).
Var pointwise_unary(const Var& a, double (*f)(double),
                    double (*dfdx)(double x, double y)) {
  Tensor out(a.value().shape());
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(a.value()[i]);
  return make(std::move(out), {a}, [dfdx](Node& self) {
    Node& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    Tensor& da = pa.grad_storage();
    const std::size_t n = self.value.numel();
    for (std::size_t i = 0; i < n; ++i)
      da[i] += self.grad[i] * dfdx(pa.value[i], self.value[i]);
  });
}

}  // namespace

void Var::backward() const {
  Node* root = n_.get();
  if (root->value.rank() != 0)
    throw ShapeError("backward: root must be a scalar");
  if (!root->requires_grad) return;

  // Iterative post-order DFS over the requires_grad subgraph.
  std::vector<Node*> order;
  std::unordered_set<Node*> done;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx == 0 && done.count(node)) {
      stack.pop_back();
      continue;
    }
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (p->requires_grad && !done.count(p)) stack.emplace_back(p, 0);
    } else {
      if (!done.count(node)) {
        done.insert(node);
        order.push_back(node);
      }
      stack.pop_back();
    }
  }

  root->grad_storage().at() += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backfn) n->backfn(*n);
  }
}

namespace ops {

// ---------------------------------------------------------------- pointwise

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor out(a.value().shape());
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out[i] = a.value()[i] + b.value()[i];
  return make(std::move(out), {a, b}, [](Node& self) {
    for (int k = 0; k < 2; ++k) {
      Node& p = *self.parents[static_cast<std::size_t>(k)];
      if (!p.requires_grad) continue;
      Tensor& d = p.grad_storage();
      for (std::size_t i = 0; i < self.value.numel(); ++i) d[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor out(a.value().shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make(std::move(out), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      Tensor& d = pa.grad_storage();
      for (std::size_t i = 0; i < self.value.numel(); ++i) d[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      Tensor& d = pb.grad_storage();
      for (std::size_t i = 0; i < self.value.numel(); ++i) d[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensor out(a.value().shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make(std::move(out), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      Tensor& d = pa.grad_storage();
      for (std::size_t i = 0; i < self.value.numel(); ++i)
        d[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      Tensor& d = pb.grad_storage();
      for (std::size_t i = 0; i < self.value.numel(); ++i)
        d[i] += self.grad[i] * pa.value[i];
    }
  });
}

Var div(const Var& a, const Var& b) {
  check_same_shape(a, b, "div");
  Tensor out(a.value().shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] / b.value()[i];
  return make(std::move(out), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      Tensor& d = pa.grad_storage();
      for (std::size_t i = 0; i < self.value.numel(); ++i)
        d[i] += self.grad[i] / pb.value[i];
    }
    if (pb.requires_grad) {
      Tensor& d = pb.grad_storage();
      for (std::size_t i = 0; i < self.value.numel(); ++i)
        d[i] -= self.grad[i] * pa.value[i] / (pb.value[i] * pb.value[i]);
    }
  });
}

Var add_scalar(const Var& a, double c) {
  Tensor out(a.value().shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + c;
  return make(std::move(out), {a}, [](Node& self) {
    Node& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    Tensor& d = pa.grad_storage();
    for (std::size_t i = 0; i < self.value.numel(); ++i) d[i] += self.grad[i];
  });
}

Var mul_scalar(const Var& a, double c) {
  Tensor out(a.value().shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * c;
  return make(std::move(out), {a}, [c](Node& self) {
    Node& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    Tensor& d = pa.grad_storage();
    for (std::size_t i = 0; i < self.value.numel(); ++i) d[i] += self.grad[i] * c;
  });
}

Var neg(const Var& a) { return mul_scalar(a, -1.0); }

Var relu(const Var& a) {
  return pointwise_unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& a, double slope) {
  Tensor out(a.value().shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const double x = a.value()[i];
    out[i] = x > 0.0 ? x : slope * x;
  }
  return make(std::move(out), {a}, [slope](Node& self) {
    Node& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    Tensor& d = pa.grad_storage();
    for (std::size_t i = 0; i < self.value.numel(); ++i)
      d[i] += self.grad[i] * (pa.value[i] > 0.0 ? 1.0 : slope);
  });
}

Var tanh_(const Var& a) {
  return pointwise_unary(
      a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Var exp_(const Var& a) {
  return pointwise_unary(
      a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Var log_(const Var& a) {
  return pointwise_unary(
      a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Var sqrt_(const Var& a) {
  return pointwise_unary(
      a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

Var abs_(const Var& a) {
  return pointwise_unary(
      a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var square(const Var& a) {
  return pointwise_unary(
      a, [](double x) { return x * x; },
      [](double x, double) { return 2.0 * x; });
}

Var softplus(const Var& a) {
  return pointwise_unary(
      a,
      [](double x) {
        if (x > 30.0) return x;
        if (x < -30.0) return std::exp(x);
        return std::log1p(std::exp(x));
      },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

// --------------------------------------------------------------- reductions

Var sum(const Var& a) {
  Tensor out = Tensor::scalar(a.value().sum());
  return make(std::move(out), {a}, [](Node& self) {
    Node& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    Tensor& d = pa.grad_storage();
    const double g = self.grad.at();
    for (std::size_t i = 0; i < d.numel(); ++i) d[i] += g;
  });
}

Var mean(const Var& a) {
  if (a.value().numel() == 0) throw ShapeError("mean of empty tensor");
  Tensor out = Tensor::scalar(a.value().mean());
  const double inv = 1.0 / static_cast<double>(a.value().numel());
  return make(std::move(out), {a}, [inv](Node& self) {
    Node& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    Tensor& d = pa.grad_storage();
    const double g = self.grad.at() * inv;
    for (std::size_t i = 0; i < d.numel(); ++i) d[i] += g;
  });
}

// ---------------------------------------------------------- channel helpers

static void check_chw(const Var& v, const char* op) {
  if (v.value().rank() != 3)
    throw ShapeError(cat(op, ": expected (C,H,W), got ", shape_str(v.value())));
}

Var channel_mean(const Var& chw) {
  check_chw(chw, "channel_mean");
  const int C = chw.value().dim(0), H = chw.value().dim(1), W = chw.value().dim(2);
  Tensor out({C});
  const double inv = 1.0 / static_cast<double>(H * W);
  for (int c = 0; c < C; ++c) {
    double s = 0.0;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) s += chw.value().at(c, y, x);
    out.at(c) = s * inv;
  }
  return make(std::move(out), {chw}, [inv, H, W, C](Node& self) {
    Node& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    Tensor& d = pa.grad_storage();
    for (int c = 0; c < C; ++c) {
      const double g = self.grad.at(c) * inv;
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) d.at(c, y, x) += g;
    }
  });
}

Var add_channel(const Var& chw, const Var& cvec) {
  check_chw(chw, "add_channel");
  const int C = chw.value().dim(0), H = chw.value().dim(1), W = chw.value().dim(2);
  if (cvec.value().rank() != 1 || cvec.value().dim(0) != C)
    throw ShapeError(cat("add_channel: vector ", shape_str(cvec.value()),
                         " does not match C=", C));
  Tensor out(chw.value().shape());
  for (int c = 0; c < C; ++c) {
    const double v = cvec.value().at(c);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) out.at(c, y, x) = chw.value().at(c, y, x) + v;
  }
  return make(std::move(out), {chw, cvec}, [C, H, W](Node& self) {
    Node& px = *self.parents[0];
    Node& pv = *self.parents[1];
    if (px.requires_grad) {
      Tensor& d = px.grad_storage();
      for (std::size_t i = 0; i < d.numel(); ++i) d[i] += self.grad[i];
    }
    if (pv.requires_grad) {
      Tensor& d = pv.grad_storage();
      for (int c = 0; c < C; ++c) {
        double s = 0.0;
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x) s += self.grad.at(c, y, x);
        d.at(c) += s;
      }
    }
  });
}

Var mul_channel(const Var& chw, const Var& cvec) {
  check_chw(chw, "mul_channel");
  const int C = chw.value().dim(0), H = chw.value().dim(1), W = chw.value().dim(2);
  if (cvec.value().rank() != 1 || cvec.value().dim(0) != C)
    throw ShapeError(cat("mul_channel: vector ", shape_str(cvec.value()),
                         " does not match C=", C));
  Tensor out(chw.value().shape());
  for (int c = 0; c < C; ++c) {
    const double v = cvec.value().at(c);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) out.at(c, y, x) = chw.value().at(c, y, x) * v;
  }
  return make(std::move(out), {chw, cvec}, [C, H, W](Node& self) {
    Node& px = *self.parents[0];
    Node& pv = *self.parents[1];
    if (px.requires_grad) {
      Tensor& d = px.grad_storage();
      for (int c = 0; c < C; ++c) {
        const double v = pv.value.at(c);
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x) d.at(c, y, x) += self.grad.at(c, y, x) * v;
      }
    }
    if (pv.requires_grad) {
      Tensor& d = pv.grad_storage();
      for (int c = 0; c < C; ++c) {
        double s = 0.0;
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x)
            s += self.grad.at(c, y, x) * px.value.at(c, y, x);
        d.at(c) += s;
      }
    }
  });
}

Var slice_channels(const Var& chw, int c0, int c1) {
  check_chw(chw, "slice_channels");
  const int C = chw.value().dim(0), H = chw.value().dim(1), W = chw.value().dim(2);
  if (c0 < 0 || c1 > C || c0 >= c1)
    throw ShapeError(cat("slice_channels: [", c0, ",", c1, ") out of C=", C));
  Tensor out({c1 - c0, H, W});
  for (int c = c0; c < c1; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) out.at(c - c0, y, x) = chw.value().at(c, y, x);
  return make(std::move(out), {chw}, [c0, c1, H, W](Node& self) {
    Node& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    Tensor& d = pa.grad_storage();
    for (int c = c0; c < c1; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) d.at(c, y, x) += self.grad.at(c - c0, y, x);
  });
}

// ------------------------------------------------------------ instance norm

Var instance_norm(const Var& chw, const Var& gamma, const Var& beta, double eps) {
  check_chw(chw, "instance_norm");
  const int C = chw.value().dim(0), H = chw.value().dim(1), W = chw.value().dim(2);
  if (gamma.value().rank() != 1 || gamma.value().dim(0) != C ||
      beta.value().rank() != 1 || beta.value().dim(0) != C)
    throw ShapeError("instance_norm: gamma/beta must be (C)");
  const int N = H * W;
  Tensor out(chw.value().shape());
  // Stash per-channel mean and inverse stddev for the backward pass.
  auto stats = std::make_shared<std::vector<double>>(static_cast<std::size_t>(2 * C));
  for (int c = 0; c < C; ++c) {
    double mu = 0.0;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) mu += chw.value().at(c, y, x);
    mu /= N;
    double var = 0.0;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double d = chw.value().at(c, y, x) - mu;
        var += d * d;
      }
    var /= N;
    const double istd = 1.0 / std::sqrt(var + eps);
    (*stats)[static_cast<std::size_t>(2 * c)] = mu;
    (*stats)[static_cast<std::size_t>(2 * c + 1)] = istd;
    const double g = gamma.value().at(c), b = beta.value().at(c);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        out.at(c, y, x) = (chw.value().at(c, y, x) - mu) * istd * g + b;
  }
  return make(std::move(out), {chw, gamma, beta}, [C, H, W, N, stats](Node& self) {
    Node& px = *self.parents[0];
    Node& pg = *self.parents[1];
    Node& pb = *self.parents[2];
    for (int c = 0; c < C; ++c) {
      const double mu = (*stats)[static_cast<std::size_t>(2 * c)];
      const double istd = (*stats)[static_cast<std::size_t>(2 * c + 1)];
      const double gam = pg.value.at(c);
      double gsum = 0.0, gxhat = 0.0;
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const double g = self.grad.at(c, y, x);
          const double xh = (px.value.at(c, y, x) - mu) * istd;
          gsum += g;
          gxhat += g * xh;
        }
      if (pg.requires_grad) pg.grad_storage().at(c) += gxhat;
      if (pb.requires_grad) pb.grad_storage().at(c) += gsum;
      if (px.requires_grad) {
        Tensor& d = px.grad_storage();
        const double mg = gsum / N, mgx = gxhat / N;
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x) {
            const double g = self.grad.at(c, y, x);
            const double xh = (px.value.at(c, y, x) - mu) * istd;
            d.at(c, y, x) += gam * istd * (g - mg - xh * mgx);
          }
      }
    }
  });
}

// -------------------------------------------------------------- convolution

namespace {

// col is (C*kh*kw) x (npos_h*npos_w), row-major. Position (py,px) maps into
// source pixel (py*stride - pad + ky, px*stride - pad + kx); out-of-range
// reads are zero.
void im2col(const double* src, int C, int Hs, int Ws, int kh, int kw, int stride,
            int pad, int nph, int npw, double* col) {
  const int ncols = nph * npw;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        double* row = col + (static_cast<std::size_t>(c) * kh * kw +
                             static_cast<std::size_t>(ky) * kw + kx) *
                                ncols;
        for (int py = 0; py < nph; ++py) {
          const int sy = py * stride - pad + ky;
          if (sy < 0 || sy >= Hs) {
            for (int px = 0; px < npw; ++px) row[py * npw + px] = 0.0;
            continue;
          }
          const double* srow = src + (static_cast<std::size_t>(c) * Hs + sy) * Ws;
          for (int px = 0; px < npw; ++px) {
            const int sx = px * stride - pad + kx;
            row[py * npw + px] = (sx < 0 || sx >= Ws) ? 0.0 : srow[sx];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add col back into dst (C,Ht,Wt).
void col2im(const double* col, int C, int Ht, int Wt, int kh, int kw, int stride,
            int pad, int nph, int npw, double* dst) {
  const int ncols = nph * npw;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const double* row = col + (static_cast<std::size_t>(c) * kh * kw +
                                   static_cast<std::size_t>(ky) * kw + kx) *
                                      ncols;
        for (int py = 0; py < nph; ++py) {
          const int ty = py * stride - pad + ky;
          if (ty < 0 || ty >= Ht) continue;
          double* drow = dst + (static_cast<std::size_t>(c) * Ht + ty) * Wt;
          for (int px = 0; px < npw; ++px) {
            const int tx = px * stride - pad + kx;
            if (tx >= 0 && tx < Wt) drow[tx] += row[py * npw + px];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& bias, int stride, int pad) {
  check_chw(x, "conv2d");
  if (w.value().rank() != 4)
    throw ShapeError(cat("conv2d: weight must be (Cout,Cin,kh,kw), got ",
                         shape_str(w.value())));
  const int Cin = x.value().dim(0), H = x.value().dim(1), W = x.value().dim(2);
  const int Cout = w.value().dim(0), kh = w.value().dim(2), kw = w.value().dim(3);
  if (w.value().dim(1) != Cin)
    throw ShapeError(cat("conv2d: weight Cin=", w.value().dim(1),
                         " vs input Cin=", Cin));
  if (stride < 1) throw ArgumentError("conv2d: stride must be >= 1");
  const int Ho = (H + 2 * pad - kh) / stride + 1;
  const int Wo = (W + 2 * pad - kw) / stride + 1;
  if (Ho < 1 || Wo < 1)
    throw ShapeError(cat("conv2d: kernel ", kh, "x", kw, " too large for ", H,
                         "x", W, " with pad ", pad));
  if (bias.defined() &&
      (bias.value().rank() != 1 || bias.value().dim(0) != Cout))
    throw ShapeError("conv2d: bias must be (Cout)");

  const int ckk = Cin * kh * kw, ncols = Ho * Wo;
  std::vector<double> col(static_cast<std::size_t>(ckk) * ncols);
  im2col(x.value().data(), Cin, H, W, kh, kw, stride, pad, Ho, Wo, col.data());

  Tensor out({Cout, Ho, Wo});
  {
    MapCM wm(w.value().data(), Cout, ckk);
    MapCM cm(col.data(), ckk, ncols);
    MapM om(out.data(), Cout, ncols);
    om.noalias() = wm * cm;
  }
  if (bias.defined()) {
    for (int co = 0; co < Cout; ++co) {
      const double b = bias.value().at(co);
      for (int i = 0; i < ncols; ++i) out.data()[co * ncols + i] += b;
    }
  }

  std::vector<Var> parents{x, w};
  const bool has_bias = bias.defined();
  if (has_bias) parents.push_back(bias);
  return make(std::move(out), std::move(parents),
              [Cin, H, W, Cout, kh, kw, stride, pad, Ho, Wo, has_bias](Node& self) {
                Node& px = *self.parents[0];
                Node& pw = *self.parents[1];
                const int ckk = Cin * kh * kw, ncols = Ho * Wo;
                MapCM gm(self.grad.data(), Cout, ncols);
                if (pw.requires_grad || px.requires_grad) {
                  std::vector<double> col(static_cast<std::size_t>(ckk) * ncols);
                  im2col(px.value.data(), Cin, H, W, kh, kw, stride, pad, Ho, Wo,
                         col.data());
                  if (pw.requires_grad) {
                    MapCM cm(col.data(), ckk, ncols);
                    MapM dw(pw.grad_storage().data(), Cout, ckk);
                    dw.noalias() += gm * cm.transpose();
                  }
                  if (px.requires_grad) {
                    std::vector<double> dcol(static_cast<std::size_t>(ckk) * ncols);
                    MapCM wm(pw.value.data(), Cout, ckk);
                    MapM dcm(dcol.data(), ckk, ncols);
                    dcm.noalias() = wm.transpose() * gm;
                    col2im(dcol.data(), Cin, H, W, kh, kw, stride, pad, Ho, Wo,
                           px.grad_storage().data());
                  }
                }
                if (has_bias) {
                  Node& pb = *self.parents[2];
                  if (pb.requires_grad) {
                    Tensor& db = pb.grad_storage();
                    for (int co = 0; co < Cout; ++co) {
                      double s = 0.0;
                      for (int i = 0; i < ncols; ++i)
                        s += self.grad.data()[co * ncols + i];
                      db.at(co) += s;
                    }
                  }
                }
              });
}

Var conv2d_transpose(const Var& x, const Var& w, const Var& bias, int stride,
                     int pad) {
  check_chw(x, "conv2d_transpose");
  if (w.value().rank() != 4)
    throw ShapeError(cat("conv2d_transpose: weight must be (Cin,Cout,kh,kw), got ",
                         shape_str(w.value())));
  const int Cin = x.value().dim(0), H = x.value().dim(1), W = x.value().dim(2);
  if (w.value().dim(0) != Cin)
    throw ShapeError(cat("conv2d_transpose: weight Cin=", w.value().dim(0),
                         " vs input Cin=", Cin));
  const int Cout = w.value().dim(1), kh = w.value().dim(2), kw = w.value().dim(3);
  if (stride < 1) throw ArgumentError("conv2d_transpose: stride must be >= 1");
  const int Ho = (H - 1) * stride - 2 * pad + kh;
  const int Wo = (W - 1) * stride - 2 * pad + kw;
  if (Ho < 1 || Wo < 1) throw ShapeError("conv2d_transpose: empty output");
  if (bias.defined() &&
      (bias.value().rank() != 1 || bias.value().dim(0) != Cout))
    throw ShapeError("conv2d_transpose: bias must be (Cout)");

  const int ckk = Cout * kh * kw, ncols = H * W;
  std::vector<double> col(static_cast<std::size_t>(ckk) * ncols);
  {
    MapCM wm(w.value().data(), Cin, ckk);
    MapCM xm(x.value().data(), Cin, ncols);
    MapM cm(col.data(), ckk, ncols);
    cm.noalias() = wm.transpose() * xm;
  }
  Tensor out({Cout, Ho, Wo});
  col2im(col.data(), Cout, Ho, Wo, kh, kw, stride, pad, H, W, out.data());
  if (bias.defined()) {
    for (int co = 0; co < Cout; ++co) {
      const double b = bias.value().at(co);
      for (int i = 0; i < Ho * Wo; ++i) out.data()[co * Ho * Wo + i] += b;
    }
  }

  std::vector<Var> parents{x, w};
  const bool has_bias = bias.defined();
  if (has_bias) parents.push_back(bias);
  return make(std::move(out), std::move(parents),
              [Cin, H, W, Cout, kh, kw, stride, pad, Ho, Wo, has_bias](Node& self) {
                Node& px = *self.parents[0];
                Node& pw = *self.parents[1];
                const int ckk = Cout * kh * kw, ncols = H * W;
                if (px.requires_grad || pw.requires_grad) {
                  // Patches of the output gradient as seen from each input cell.
                  std::vector<double> gcol(static_cast<std::size_t>(ckk) * ncols);
                  im2col(self.grad.data(), Cout, Ho, Wo, kh, kw, stride, pad, H, W,
                         gcol.data());
                  MapCM gc(gcol.data(), ckk, ncols);
                  if (px.requires_grad) {
                    MapCM wm(pw.value.data(), Cin, ckk);
                    MapM dx(px.grad_storage().data(), Cin, ncols);
                    dx.noalias() += wm * gc;
                  }
                  if (pw.requires_grad) {
                    MapCM xm(px.value.data(), Cin, ncols);
                    MapM dw(pw.grad_storage().data(), Cin, ckk);
                    dw.noalias() += xm * gc.transpose();
                  }
                }
                if (has_bias) {
                  Node& pb = *self.parents[2];
                  if (pb.requires_grad) {
                    Tensor& db = pb.grad_storage();
                    for (int co = 0; co < Cout; ++co) {
                      double s = 0.0;
                      for (int i = 0; i < Ho * Wo; ++i)
                        s += self.grad.data()[co * Ho * Wo + i];
                      db.at(co) += s;
                    }
                  }
                }
              });
}

// ------------------------------------------------------- directional passes

namespace {

struct PassGeom {
  bool rows;     // true: sequence over rows (down/up), false: columns
  bool forward;  // true: increasing index (down / left-to-right)
};

PassGeom geom_of(PassDir d) {
  switch (d) {
    case PassDir::kDown:
      return {true, true};
    case PassDir::kUp:
      return {true, false};
    case PassDir::kLeftRight:
      return {false, true};
    default:
      return {false, false};
  }
}

}  // namespace

Var directional_pass(const Var& x, const Var& w, PassDir dir) {
  check_chw(x, "directional_pass");
  const int C = x.value().dim(0), H = x.value().dim(1), W = x.value().dim(2);
  if (w.value().rank() != 3 || w.value().dim(0) != C || w.value().dim(1) != C)
    throw ShapeError(cat("directional_pass: weight must be (C,C,k) with C=", C,
                         ", got ", shape_str(w.value())));
  const int k = w.value().dim(2);
  if (k % 2 == 0) throw ArgumentError("directional_pass: kernel width must be odd");
  const int khalf = k / 2;
  const PassGeom g = geom_of(dir);
  const int S = g.rows ? H : W;  // sequence length
  const int L = g.rows ? W : H;  // lane length (1-D conv extent)

  Tensor out = x.value();
  auto idx = [&](const Tensor& t, int c, int s, int l) -> double {
    return g.rows ? t.at(c, s, l) : t.at(c, l, s);
  };
  auto ref = [&](Tensor& t, int c, int s, int l) -> double& {
    return g.rows ? t.at(c, s, l) : t.at(c, l, s);
  };

  // h[s] = x[s] + relu(conv1d(h[prev])), prev already updated in place.
  for (int step = 1; step < S; ++step) {
    const int cur = g.forward ? step : S - 1 - step;
    const int prev = g.forward ? cur - 1 : cur + 1;
    for (int co = 0; co < C; ++co) {
      for (int l = 0; l < L; ++l) {
        double pre = 0.0;
        for (int ci = 0; ci < C; ++ci) {
          for (int t = 0; t < k; ++t) {
            const int ll = l + t - khalf;
            if (ll < 0 || ll >= L) continue;
            pre += w.value().at(co, ci, t) * idx(out, ci, prev, ll);
          }
        }
        if (pre > 0.0) ref(out, co, cur, l) += pre;
      }
    }
  }

  return make(std::move(out), {x, w}, [C, H, W, k, khalf, g](Node& self) {
    Node& px = *self.parents[0];
    Node& pw = *self.parents[1];
    const int S = g.rows ? H : W;
    const int L = g.rows ? W : H;
    auto idx = [&](const Tensor& t, int c, int s, int l) -> double {
      return g.rows ? t.at(c, s, l) : t.at(c, l, s);
    };
    auto ref = [&](Tensor& t, int c, int s, int l) -> double& {
      return g.rows ? t.at(c, s, l) : t.at(c, l, s);
    };
    Tensor gh = self.grad;  // working copy; accumulates recurrence terms
    Tensor* dw = pw.requires_grad ? &pw.grad_storage() : nullptr;
    std::vector<double> pre(static_cast<std::size_t>(C) * L);
    // Walk steps in reverse of the forward order.
    for (int step = S - 1; step >= 1; --step) {
      const int cur = g.forward ? step : S - 1 - step;
      const int prev = g.forward ? cur - 1 : cur + 1;
      // Recompute pre-activations of this step from the stored output.
      for (int co = 0; co < C; ++co)
        for (int l = 0; l < L; ++l) {
          double p = 0.0;
          for (int ci = 0; ci < C; ++ci)
            for (int t = 0; t < k; ++t) {
              const int ll = l + t - khalf;
              if (ll < 0 || ll >= L) continue;
              p += pw.value.at(co, ci, t) * idx(self.value, ci, prev, ll);
            }
          pre[static_cast<std::size_t>(co) * L + l] = p;
        }
      for (int co = 0; co < C; ++co)
        for (int l = 0; l < L; ++l) {
          if (pre[static_cast<std::size_t>(co) * L + l] <= 0.0) continue;
          const double dp = idx(gh, co, cur, l);
          if (dp == 0.0) continue;
          for (int ci = 0; ci < C; ++ci)
            for (int t = 0; t < k; ++t) {
              const int ll = l + t - khalf;
              if (ll < 0 || ll >= L) continue;
              ref(gh, ci, prev, ll) += pw.value.at(co, ci, t) * dp;
              if (dw) dw->at(co, ci, t) += dp * idx(self.value, ci, prev, ll);
            }
        }
    }
    if (px.requires_grad) {
      Tensor& dx = px.grad_storage();
      for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += gh[i];
    }
  });
}

// ------------------------------------------------------------- log-softmax

Var log_softmax_c(const Var& chw) {
  check_chw(chw, "log_softmax_c");
  const int C = chw.value().dim(0), H = chw.value().dim(1), W = chw.value().dim(2);
  Tensor out(chw.value().shape());
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double m = chw.value().at(0, y, x);
      for (int c = 1; c < C; ++c) m = std::max(m, chw.value().at(c, y, x));
      double z = 0.0;
      for (int c = 0; c < C; ++c) z += std::exp(chw.value().at(c, y, x) - m);
      const double lz = m + std::log(z);
      for (int c = 0; c < C; ++c) out.at(c, y, x) = chw.value().at(c, y, x) - lz;
    }
  return make(std::move(out), {chw}, [C, H, W](Node& self) {
    Node& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    Tensor& d = pa.grad_storage();
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double gsum = 0.0;
        for (int c = 0; c < C; ++c) gsum += self.grad.at(c, y, x);
        for (int c = 0; c < C; ++c)
          d.at(c, y, x) +=
              self.grad.at(c, y, x) - std::exp(self.value.at(c, y, x)) * gsum;
      }
  });
}

Var detach(const Var& a) { return Var::constant(a.value()); }

}  // namespace ops

FdProbe fd_probe(const std::function<Var()>& build_loss, const Var& leaf,
                 std::size_t flat_index, double h) {
  Var leaf_mut = leaf;
  leaf_mut.zero_grad();
  Var loss = build_loss();
  loss.backward();
  const double analytic = leaf.grad()[flat_index];
  const double orig = leaf_mut.mutable_value()[flat_index];
  leaf_mut.mutable_value()[flat_index] = orig + h;
  const double lp = build_loss().value().at();
  leaf_mut.mutable_value()[flat_index] = orig - h;
  const double lm = build_loss().value().at();
  leaf_mut.mutable_value()[flat_index] = orig;
  return {analytic, (lp - lm) / (2.0 * h)};
}

}  // namespace crowdlab::nn
