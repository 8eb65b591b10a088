#include "crowdlab/losses.hpp"

#include <cmath>

#include "crowdlab/common.hpp"

namespace crowdlab::loss {

namespace O = crowdlab::nn::ops;

namespace {

void require_same_shape(const Var& a, const Var& b, const char* what) {
  if (!a.defined() || !b.defined()) throw ArgumentError(cat(what, ": undefined input"));
  if (!a.value().same_shape(b.value()))
    throw ShapeError(cat(what, ": shape mismatch ", shape_str(a.value()), " vs ",
                         shape_str(b.value())));
}

void require_scalar(const Var& v, const char* what) {
  if (!v.defined() || v.value().numel() != 1)
    throw ShapeError(cat(what, ": expected a scalar term"));
}

// Depthwise 11x11 Gaussian (sigma 1.5) as a dense (C,C,11,11) conv weight
// with zeros off the channel diagonal.
Tensor gaussian_window(int channels) {
  constexpr int k = 11;
  constexpr double sigma = 1.5;
  double g[k];
  double z = 0.0;
  for (int i = 0; i < k; ++i) {
    const double d = i - (k - 1) / 2.0;
    g[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    z += g[i];
  }
  for (int i = 0; i < k; ++i) g[i] /= z;
  Tensor w({channels, channels, k, k});
  for (int c = 0; c < channels; ++c)
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) w.at(c, c, i, j) = g[i] * g[j];
  return w;
}

}  // namespace

Var counting_mse(const Var& pred, const Var& gt) {
  require_same_shape(pred, gt, "counting_mse");
  return O::mean(O::square(O::sub(pred, gt)));
}

Var seg_ce(const Var& logits, const Tensor& mask) {
  if (!logits.defined()) throw ArgumentError("seg_ce: undefined logits");
  const Tensor& lt = logits.value();
  if (lt.rank() != 3 || lt.dim(0) != 2)
    throw ShapeError(cat("seg_ce: expected (2,H,W) logits, got ", shape_str(lt)));
  if (mask.rank() != 2 || mask.dim(0) != lt.dim(1) || mask.dim(1) != lt.dim(2))
    throw ShapeError(cat("seg_ce: mask ", shape_str(mask), " does not match logits ",
                         shape_str(lt)));
  const int h = mask.dim(0), w = mask.dim(1);
  Tensor fg({1, h, w}), bg({1, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double m = mask.at(y, x);
      if (m != 0.0 && m != 1.0)
        throw ArgumentError(cat("seg_ce: mask must be exactly 0/1, found ", m));
      fg.at(0, y, x) = m;
      bg.at(0, y, x) = 1.0 - m;
    }
  Var ls = O::log_softmax_c(logits);
  Var picked = O::add(O::mul(O::slice_channels(ls, 0, 1), Var::constant(bg)),
                      O::mul(O::slice_channels(ls, 1, 2), Var::constant(fg)));
  return O::neg(O::mean(picked));
}

Var l1_loss(const Var& a, const Var& b) {
  require_same_shape(a, b, "l1_loss");
  return O::mean(O::abs_(O::sub(a, b)));
}

Var lsgan_loss(const Var& scores, double target) {
  if (!scores.defined()) throw ArgumentError("lsgan_loss: undefined scores");
  if (!std::isfinite(target)) throw ArgumentError("lsgan_loss: non-finite target");
  return O::mean(O::square(O::add_scalar(scores, -target)));
}

Var lsgan_disc_loss(const Var& real_scores, const Var& fake_scores) {
  return O::mul_scalar(O::add(lsgan_loss(real_scores, 1.0), lsgan_loss(fake_scores, 0.0)), 0.5);
}

Var ssim_index(const Var& a, const Var& b, double peak) {
  require_same_shape(a, b, "ssim_index");
  if (!(peak > 0.0) || !std::isfinite(peak))
    throw ArgumentError(cat("ssim_index: bad peak ", peak));
  const Tensor& av = a.value();
  if (av.rank() != 3)
    throw ShapeError(cat("ssim_index: expected (C,H,W), got ", shape_str(av)));
  if (av.dim(1) < 11 || av.dim(2) < 11)
    throw ShapeError(cat("ssim_index: inputs must be at least 11x11, got ", shape_str(av)));
  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);
  Var win = Var::constant(gaussian_window(av.dim(0)));
  auto blur = [&](const Var& x) { return O::conv2d(x, win, Var(), 1, 0); };
  Var mu_a = blur(a);
  Var mu_b = blur(b);
  Var va = O::sub(blur(O::square(a)), O::square(mu_a));
  Var vb = O::sub(blur(O::square(b)), O::square(mu_b));
  Var cab = O::sub(blur(O::mul(a, b)), O::mul(mu_a, mu_b));
  Var num = O::mul(O::add_scalar(O::mul_scalar(O::mul(mu_a, mu_b), 2.0), c1),
                   O::add_scalar(O::mul_scalar(cab, 2.0), c2));
  Var den = O::mul(O::add_scalar(O::add(O::square(mu_a), O::square(mu_b)), c1),
                   O::add_scalar(O::add(va, vb), c2));
  return O::mean(O::div(num, den));
}

Var se_cycle_loss(const Var& orig_s, const Var& rec_s, const Var& orig_r, const Var& rec_r) {
  Var ds = O::add_scalar(O::neg(ssim_index(orig_s, rec_s)), 1.0);
  Var dr = O::add_scalar(O::neg(ssim_index(orig_r, rec_r)), 1.0);
  return O::add(ds, dr);
}

CycleGanLoss cycle_gan_loss(const Var& d_fake_r, const Var& d_fake_s, const Var& i_s,
                            const Var& rec_s, const Var& i_r, const Var& rec_r,
                            double lambda_cycle) {
  if (!(lambda_cycle >= 0.0) || !std::isfinite(lambda_cycle))
    throw ArgumentError(cat("cycle_gan_loss: bad lambda_cycle ", lambda_cycle));
  CycleGanLoss out;
  out.adv_sr = lsgan_loss(d_fake_r, 1.0);
  out.adv_rs = lsgan_loss(d_fake_s, 1.0);
  out.cycle = O::add(l1_loss(rec_s, i_s), l1_loss(rec_r, i_r));
  out.total = O::add(O::add(out.adv_sr, out.adv_rs), O::mul_scalar(out.cycle, lambda_cycle));
  return out;
}

Var domain_cls_loss(const Var& logits_s, const Var& logits_r) {
  for (const Var* v : {&logits_s, &logits_r}) {
    if (!v->defined()) throw ArgumentError("domain_cls_loss: undefined logits");
    const Tensor& t = v->value();
    if (t.rank() != 3 || t.dim(0) != 2)
      throw ShapeError(cat("domain_cls_loss: expected (2,h,w) logits, got ", shape_str(t)));
  }
  Var nll_s = O::neg(O::mean(O::slice_channels(O::log_softmax_c(logits_s), 0, 1)));
  Var nll_r = O::neg(O::mean(O::slice_channels(O::log_softmax_c(logits_r), 1, 2)));
  return O::mul_scalar(O::add(nll_s, nll_r), 0.5);
}

Var inverse_adv_loss(const Var& logits_r) {
  if (!logits_r.defined()) throw ArgumentError("inverse_adv_loss: undefined logits");
  const Tensor& t = logits_r.value();
  if (t.rank() != 3 || t.dim(0) != 2)
    throw ShapeError(cat("inverse_adv_loss: expected (2,h,w) logits, got ", shape_str(t)));
  return O::neg(O::sum(O::slice_channels(O::log_softmax_c(logits_r), 0, 1)));
}

JointLoss joint_loss(const Var& cnt, const Var& trans, const Var& adv, double alpha, double beta,
                     double lambda_adv) {
  require_scalar(cnt, "joint_loss (counting term)");
  require_scalar(trans, "joint_loss (translation term)");
  require_scalar(adv, "joint_loss (adversarial term)");
  for (double w : {alpha, beta, lambda_adv})
    if (!(w >= 0.0) || !std::isfinite(w))
      throw ArgumentError(cat("joint_loss: bad weight ", w));
  JointLoss out;
  out.cnt_term = O::mul_scalar(cnt, alpha);
  out.trans_term = O::mul_scalar(trans, beta);
  out.adv_term = O::mul_scalar(adv, lambda_adv);
  out.total = O::add(O::add(out.cnt_term, out.trans_term), out.adv_term);
  return out;
}

}  // namespace crowdlab::loss
