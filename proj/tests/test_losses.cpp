#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "crowdlab/losses.hpp"
#include "crowdlab/rng.hpp"
#include "doctest.h"

using namespace crowdlab;
using namespace crowdlab::loss;
namespace O = crowdlab::nn::ops;
using crowdlab::nn::Var;

namespace {

Tensor rand_tensor(const std::vector<int>& shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Tensor t(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

void fd_check(const std::function<Var()>& loss, Var leaf, const std::vector<std::size_t>& idxs,
              double tol = 1e-4) {
  for (std::size_t idx : idxs) {
    auto pr = nn::fd_probe(loss, leaf, idx, 1e-6);
    const double denom = std::max({std::fabs(pr.analytic), std::fabs(pr.numeric), 1.0});
    INFO("idx=", idx, " analytic=", pr.analytic, " numeric=", pr.numeric);
    CHECK(std::fabs(pr.analytic - pr.numeric) / denom < tol);
  }
}

// Channel c of a (C,H,W) tensor as (1,H,W).
Tensor take_channel(const Tensor& t, int c) {
  Tensor out({1, t.dim(1), t.dim(2)});
  for (int y = 0; y < t.dim(1); ++y)
    for (int x = 0; x < t.dim(2); ++x) out.at(0, y, x) = t.at(c, y, x);
  return out;
}

}  // namespace

TEST_CASE("counting mse basics and gradient") {
  Tensor z({1, 2, 3}, 0.0), two({1, 2, 3}, 2.0);
  CHECK(counting_mse(Var::constant(z), Var::constant(two)).value()[0] == doctest::Approx(4.0));
  CHECK(counting_mse(Var::constant(two), Var::constant(two)).value()[0] == 0.0);
  CHECK_THROWS_AS(counting_mse(Var::constant(z), Var::constant(Tensor({1, 3, 2}, 0.0))),
                  ShapeError);
  Rng rng(1);
  Var pred = Var::leaf(rand_tensor({1, 4, 4}, rng), true);
  Var gt = Var::constant(rand_tensor({1, 4, 4}, rng));
  fd_check([&] { return counting_mse(pred, gt); }, pred, {0, 7, 15});
}

TEST_CASE("segmentation cross entropy matches a hand oracle") {
  Rng rng(2);
  Tensor logits = rand_tensor({2, 4, 5}, rng, -2.0, 2.0);
  Tensor mask({4, 5});
  for (std::size_t i = 0; i < mask.numel(); ++i) mask[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
  double expect = 0.0;
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 5; ++x) {
      const double l0 = logits.at(0, y, x), l1 = logits.at(1, y, x);
      const double m = std::max(l0, l1);
      const double lse = m + std::log(std::exp(l0 - m) + std::exp(l1 - m));
      expect += lse - (mask.at(y, x) == 1.0 ? l1 : l0);
    }
  expect /= 20.0;
  Var got = seg_ce(Var::constant(logits), mask);
  CHECK(got.value()[0] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("segmentation cross entropy edge behavior") {
  Tensor uniform({2, 3, 3}, 0.7);  // equal logits in both channels
  Tensor mask({3, 3});
  mask.at(1, 1) = 1.0;
  CHECK(seg_ce(Var::constant(uniform), mask).value()[0] ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Tensor confident({2, 3, 3});
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x) {
      const bool fg = mask.at(y, x) == 1.0;
      confident.at(0, y, x) = fg ? -10.0 : 10.0;
      confident.at(1, y, x) = fg ? 10.0 : -10.0;
    }
  CHECK(seg_ce(Var::constant(confident), mask).value()[0] < 1e-8);

  Tensor bad_mask({3, 3}, 0.5);
  CHECK_THROWS_AS(seg_ce(Var::constant(uniform), bad_mask), ArgumentError);
  CHECK_THROWS_AS(seg_ce(Var::constant(uniform), Tensor({2, 3}, 0.0)), ShapeError);
  CHECK_THROWS_AS(seg_ce(Var::constant(Tensor({3, 3, 3}, 0.0)), mask), ShapeError);

  Rng rng(3);
  Var logits = Var::leaf(rand_tensor({2, 4, 4}, rng, -1.5, 1.5), true);
  Tensor m2({4, 4});
  for (std::size_t i = 0; i < m2.numel(); ++i) m2[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
  fd_check([&] { return seg_ce(logits, m2); }, logits, {0, 9, 31});
}

TEST_CASE("l1 and lsgan terms") {
  Tensor a({4}, 1.0), b({4});
  b[0] = 0.0; b[1] = 2.0; b[2] = 1.0; b[3] = 5.0;
  CHECK(l1_loss(Var::constant(a), Var::constant(b)).value()[0] ==
        doctest::Approx((1.0 + 1.0 + 0.0 + 4.0) / 4.0));

  Tensor s({2});
  s[0] = 0.2; s[1] = 0.6;
  CHECK(lsgan_loss(Var::constant(s), 1.0).value()[0] ==
        doctest::Approx((0.64 + 0.16) / 2.0).epsilon(1e-12));
  CHECK(lsgan_loss(Var::constant(s), 0.0).value()[0] ==
        doctest::Approx((0.04 + 0.36) / 2.0).epsilon(1e-12));

  Tensor real({1}, 0.9), fake({1}, 0.3);
  CHECK(lsgan_disc_loss(Var::constant(real), Var::constant(fake)).value()[0] ==
        doctest::Approx(0.5 * (0.01 + 0.09)).epsilon(1e-9));
  CHECK_THROWS_AS(lsgan_loss(Var::constant(s), std::nan("")), ArgumentError);
}

TEST_CASE("ssim of identical images is one") {
  Rng rng(4);
  for (int c : {1, 3}) {
    Tensor t = rand_tensor({c, 16, 16}, rng);
    Var v = Var::constant(t);
    CHECK(ssim_index(v, v).value()[0] == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("ssim symmetry, range, and noise response") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor a = rand_tensor({1, 14, 14}, rng);
    Tensor b = rand_tensor({1, 14, 14}, rng);
    const double ab = ssim_index(Var::constant(a), Var::constant(b)).value()[0];
    const double ba = ssim_index(Var::constant(b), Var::constant(a)).value()[0];
    CHECK(ab == doctest::Approx(ba).epsilon(1e-12));
    CHECK(ab > -1.0);
    CHECK(ab <= 1.0 + 1e-12);
  }
  Tensor a = rand_tensor({1, 16, 16}, rng);
  Tensor noisy = a;
  for (std::size_t i = 0; i < noisy.numel(); ++i) noisy[i] += rng.normal(0.0, 0.1);
  const double degraded = ssim_index(Var::constant(a), Var::constant(noisy)).value()[0];
  CHECK(degraded < 0.999);
  CHECK(degraded > 0.0);
}

TEST_CASE("ssim constant-image closed form") {
  const double c1 = 1e-4;  // (0.01 * 1)^2
  Tensor a({1, 12, 12}, 0.2), b({1, 12, 12}, 0.8);
  const double expect = (2.0 * 0.2 * 0.8 + c1) / (0.2 * 0.2 + 0.8 * 0.8 + c1);
  CHECK(ssim_index(Var::constant(a), Var::constant(b)).value()[0] ==
        doctest::Approx(expect).epsilon(1e-9));
  // Larger dynamic range loosens the constants and raises the score.
  const double c1_l4 = (0.01 * 4.0) * (0.01 * 4.0);
  const double expect4 = (2.0 * 0.2 * 0.8 + c1_l4) / (0.2 * 0.2 + 0.8 * 0.8 + c1_l4);
  CHECK(ssim_index(Var::constant(a), Var::constant(b), 4.0).value()[0] ==
        doctest::Approx(expect4).epsilon(1e-9));
}

TEST_CASE("multichannel ssim averages per-channel scores") {
  Rng rng(6);
  Tensor a = rand_tensor({3, 13, 13}, rng);
  Tensor b = rand_tensor({3, 13, 13}, rng);
  double per_channel = 0.0;
  for (int c = 0; c < 3; ++c)
    per_channel += ssim_index(Var::constant(take_channel(a, c)),
                              Var::constant(take_channel(b, c))).value()[0];
  per_channel /= 3.0;
  CHECK(ssim_index(Var::constant(a), Var::constant(b)).value()[0] ==
        doctest::Approx(per_channel).epsilon(1e-12));
}

TEST_CASE("ssim input validation") {
  Rng rng(7);
  Var ok = Var::constant(rand_tensor({1, 12, 12}, rng));
  CHECK_THROWS_AS(ssim_index(ok, Var::constant(rand_tensor({1, 12, 13}, rng))), ShapeError);
  Var tiny = Var::constant(rand_tensor({1, 8, 12}, rng));
  CHECK_THROWS_AS(ssim_index(tiny, tiny), ShapeError);
  Var flat = Var::constant(rand_tensor({12, 12}, rng));
  CHECK_THROWS_AS(ssim_index(flat, flat), ShapeError);
  CHECK_THROWS_AS(ssim_index(ok, ok, 0.0), ArgumentError);
}

TEST_CASE("ssim is differentiable and ascent improves it") {
  Rng rng(8);
  Var a = Var::leaf(rand_tensor({1, 12, 12}, rng), true);
  Var b = Var::constant(rand_tensor({1, 12, 12}, rng));
  fd_check([&] { return ssim_index(a, b); }, a, {0, 77, 143}, 5e-4);

  const double before = ssim_index(a, b).value()[0];
  for (int it = 0; it < 40; ++it) {
    a.zero_grad();
    Var s = ssim_index(a, b);
    s.backward();
    Tensor& v = a.mutable_value();
    const Tensor& g = a.grad();
    for (std::size_t i = 0; i < v.numel(); ++i) v[i] += 0.5 * g[i];
  }
  const double after = ssim_index(a, b).value()[0];
  CHECK(after > before + 0.01);
}

TEST_CASE("structural cycle term vanishes on perfect reconstruction") {
  Rng rng(9);
  Var i_s = Var::constant(rand_tensor({3, 12, 12}, rng));
  Var i_r = Var::constant(rand_tensor({3, 12, 12}, rng));
  CHECK(se_cycle_loss(i_s, i_s, i_r, i_r).value()[0] == doctest::Approx(0.0).epsilon(1e-12));
  Tensor worse = i_s.value();
  for (std::size_t i = 0; i < worse.numel(); ++i) worse[i] += rng.normal(0.0, 0.15);
  const double degraded = se_cycle_loss(i_s, Var::constant(worse), i_r, i_r).value()[0];
  CHECK(degraded > 0.01);
}

TEST_CASE("cyclegan loss decomposition is exact") {
  Rng rng(10);
  Var d_fake_r = Var::constant(rand_tensor({1, 3, 3}, rng, -0.5, 0.5));
  Var d_fake_s = Var::constant(rand_tensor({1, 3, 3}, rng, -0.5, 0.5));
  Var i_s = Var::constant(rand_tensor({3, 6, 6}, rng));
  Var rec_s = Var::constant(rand_tensor({3, 6, 6}, rng));
  Var i_r = Var::constant(rand_tensor({3, 6, 6}, rng));
  Var rec_r = Var::constant(rand_tensor({3, 6, 6}, rng));
  CycleGanLoss cg = cycle_gan_loss(d_fake_r, d_fake_s, i_s, rec_s, i_r, rec_r, 10.0);
  CHECK(cg.total.value()[0] ==
        doctest::Approx(cg.adv_sr.value()[0] + cg.adv_rs.value()[0] + 10.0 * cg.cycle.value()[0])
            .epsilon(1e-12));
  CHECK(cg.adv_sr.value()[0] == doctest::Approx(lsgan_loss(d_fake_r, 1.0).value()[0]));
  CHECK(cg.cycle.value()[0] ==
        doctest::Approx(l1_loss(rec_s, i_s).value()[0] + l1_loss(rec_r, i_r).value()[0]));
  CycleGanLoss noadv = cycle_gan_loss(d_fake_r, d_fake_s, i_s, rec_s, i_r, rec_r, 0.0);
  CHECK(noadv.total.value()[0] ==
        doctest::Approx(noadv.adv_sr.value()[0] + noadv.adv_rs.value()[0]).epsilon(1e-12));
  CHECK_THROWS_AS(cycle_gan_loss(d_fake_r, d_fake_s, i_s, rec_s, i_r, rec_r, -1.0),
                  ArgumentError);
}

TEST_CASE("domain classifier loss with a hand oracle") {
  Rng rng(11);
  Tensor ls = rand_tensor({2, 3, 4}, rng, -2.0, 2.0);
  Tensor lr = rand_tensor({2, 2, 2}, rng, -2.0, 2.0);
  auto mean_nll = [](const Tensor& t, int cls) {
    double acc = 0.0;
    for (int y = 0; y < t.dim(1); ++y)
      for (int x = 0; x < t.dim(2); ++x) {
        const double l0 = t.at(0, y, x), l1 = t.at(1, y, x);
        const double m = std::max(l0, l1);
        const double lse = m + std::log(std::exp(l0 - m) + std::exp(l1 - m));
        acc += lse - (cls == 0 ? l0 : l1);
      }
    return acc / (t.dim(1) * t.dim(2));
  };
  const double expect = 0.5 * (mean_nll(ls, 0) + mean_nll(lr, 1));
  CHECK(domain_cls_loss(Var::constant(ls), Var::constant(lr)).value()[0] ==
        doctest::Approx(expect).epsilon(1e-12));

  Tensor uni_s({2, 5, 5}, 0.3), uni_r({2, 4, 4}, -1.2);
  CHECK(domain_cls_loss(Var::constant(uni_s), Var::constant(uni_r)).value()[0] ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK_THROWS_AS(domain_cls_loss(Var::constant(Tensor({3, 2, 2}, 0.0)), Var::constant(lr)),
                  ShapeError);

  Var leaf = Var::leaf(rand_tensor({2, 3, 3}, rng, -1.0, 1.0), true);
  fd_check([&] { return domain_cls_loss(leaf, Var::constant(lr)); }, leaf, {0, 8, 17});
}

TEST_CASE("inverse adversarial loss sums over locations") {
  Tensor uniform({2, 3, 5}, 0.4);
  CHECK(inverse_adv_loss(Var::constant(uniform)).value()[0] ==
        doctest::Approx(15.0 * std::log(2.0)).epsilon(1e-12));

  // Confidently source-looking features cost nearly nothing...
  Tensor srcish({2, 3, 5});
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 5; ++x) {
      srcish.at(0, y, x) = 8.0;
      srcish.at(1, y, x) = -8.0;
    }
  CHECK(inverse_adv_loss(Var::constant(srcish)).value()[0] < 1e-5);
  // ...while confidently target-looking ones cost ~16 per location.
  Tensor tgtish({2, 3, 5});
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 5; ++x) {
      tgtish.at(0, y, x) = -8.0;
      tgtish.at(1, y, x) = 8.0;
    }
  CHECK(inverse_adv_loss(Var::constant(tgtish)).value()[0] ==
        doctest::Approx(15.0 * 16.0).epsilon(1e-3));

  CHECK_THROWS_AS(inverse_adv_loss(Var::constant(Tensor({1, 3, 5}, 0.0))), ShapeError);

  Rng rng(12);
  Var leaf = Var::leaf(rand_tensor({2, 3, 3}, rng, -1.0, 1.0), true);
  fd_check([&] { return inverse_adv_loss(leaf); }, leaf, {0, 5, 17});
}

TEST_CASE("joint loss decomposition and weights") {
  Var cnt = Var::constant(2.0), trans = Var::constant(1.0), adv = Var::constant(1.0);
  JointLoss unit = joint_loss(cnt, trans, adv, 1.0, 1.0, 1.0);
  CHECK(unit.total.value()[0] == doctest::Approx(4.0).epsilon(1e-15));

  JointLoss def = joint_loss(cnt, trans, adv);  // alpha 1, beta 0.1, lambda 0.01
  CHECK(def.cnt_term.value()[0] == doctest::Approx(2.0));
  CHECK(def.trans_term.value()[0] == doctest::Approx(0.1));
  CHECK(def.adv_term.value()[0] == doctest::Approx(0.01));
  CHECK(def.total.value()[0] == doctest::Approx(2.11).epsilon(1e-15));
  CHECK(def.total.value()[0] ==
        doctest::Approx(def.cnt_term.value()[0] + def.trans_term.value()[0] +
                        def.adv_term.value()[0])
            .epsilon(1e-15));

  // Gradients of the total with respect to each component are the weights.
  Var c2 = Var::leaf(Tensor(std::vector<int>{}, 2.0), true);
  Var t2 = Var::leaf(Tensor(std::vector<int>{}, 1.0), true);
  Var a2 = Var::leaf(Tensor(std::vector<int>{}, 1.0), true);
  JointLoss jl = joint_loss(c2, t2, a2, 1.0, 0.1, 0.01);
  jl.total.backward();
  CHECK(c2.grad()[0] == doctest::Approx(1.0));
  CHECK(t2.grad()[0] == doctest::Approx(0.1));
  CHECK(a2.grad()[0] == doctest::Approx(0.01));

  CHECK_THROWS_AS(joint_loss(Var::constant(Tensor({2}, 0.0)), trans, adv), ShapeError);
  CHECK_THROWS_AS(joint_loss(cnt, trans, adv, -1.0, 0.1, 0.01), ArgumentError);
}
