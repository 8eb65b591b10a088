#pragma once

#include "crowdlab/autograd.hpp"
#include "crowdlab/tensor.hpp"

namespace crowdlab::loss {

using nn::Var;

// Mean squared error between predicted and target density maps (any matching
// shape). The canonical counting objective.
Var counting_mse(const Var& pred, const Var& gt);

// Mean per-pixel negative log-likelihood of a two-class logit map
// (2,H,W) against a hard {0,1} mask (H,W). Uniform logits score ln 2.
Var seg_ce(const Var& logits, const Tensor& mask);

// Mean absolute difference.
Var l1_loss(const Var& a, const Var& b);

// Least-squares GAN terms: mean (score - target)^2, and the discriminator
// combination 0.5*(mean (real-1)^2 + mean fake^2).
Var lsgan_loss(const Var& scores, double target);
Var lsgan_disc_loss(const Var& real_scores, const Var& fake_scores);

// Structural similarity over (C,H,W) with an 11x11 Gaussian window
// (sigma 1.5), C1=(0.01 L)^2, C2=(0.03 L)^2. Windows are taken fully inside
// the image, so H and W must be at least 11. Differentiable in both inputs.
Var ssim_index(const Var& a, const Var& b, double peak = 1.0);

// Structural-similarity cycle term: (1 - SSIM(orig_s, rec_s)) +
// (1 - SSIM(orig_r, rec_r)). Zero when both reconstructions are perfect.
Var se_cycle_loss(const Var& orig_s, const Var& rec_s, const Var& orig_r, const Var& rec_r);

// Generator-side CycleGAN objective: least-squares realness of both
// translations plus lambda-weighted L1 cycle reconstruction.
struct CycleGanLoss {
  Var adv_sr;  // translated synthetic scored by the real-domain discriminator
  Var adv_rs;  // translated real scored by the synthetic-domain discriminator
  Var cycle;   // L1(rec_s, i_s) + L1(rec_r, i_r)
  Var total;   // adv_sr + adv_rs + lambda_cycle * cycle
};
CycleGanLoss cycle_gan_loss(const Var& d_fake_r, const Var& d_fake_s, const Var& i_s,
                            const Var& rec_s, const Var& i_r, const Var& rec_r,
                            double lambda_cycle = 10.0);

// Domain classifier objective over two-channel logit maps (channel 0 =
// synthetic/source, channel 1 = real/target): balanced mean cross-entropy
// over both maps. Uniform logits score ln 2.
Var domain_cls_loss(const Var& logits_s, const Var& logits_r);

// Inverse adversarial term fooling the domain classifier: summed (not
// averaged) -log p(source) over every location of the real-path logit map.
Var inverse_adv_loss(const Var& logits_r);

// Weighted sum of the three joint-training terms. Each stored term is
// already weighted, and total is their exact sum.
struct JointLoss {
  Var cnt_term;    // alpha * counting loss
  Var trans_term;  // beta * translation loss
  Var adv_term;    // lambda_adv * inverse adversarial loss
  Var total;
};
JointLoss joint_loss(const Var& cnt, const Var& trans, const Var& adv, double alpha = 1.0,
                     double beta = 0.1, double lambda_adv = 0.01);

}  // namespace crowdlab::loss
