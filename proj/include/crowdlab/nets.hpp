#pragma once

#include <map>
#include <string>
#include <vector>

#include "crowdlab/autograd.hpp"

namespace crowdlab::nn {

// A named bag of leaf parameters plus enough architecture metadata to
// rebuild forward passes and to validate checkpoints against.
struct ModelState {
  std::string arch_id;
  std::map<std::string, Var> params;  // ordered; iteration order is part of the contract
  std::map<std::string, int> hparams;

  Var& param(const std::string& name);
  const Var& param(const std::string& name) const;
  int hparam(const std::string& name) const;
  bool has_param(const std::string& name) const { return params.count(name) != 0; }

  void zero_grad();
  int64_t param_count() const;
};

// ---- builders ------------------------------------------------------------

// Counter/segmenter: 10-conv stride-8 backbone, a channel-reducing 1x1,
// a four-direction spatial encoder (width-9 line kernels), a 1x1 density
// head ending in ReLU, and (optionally) a three-deconv segmentation head
// back to full resolution.
ModelState build_sfcn(uint64_t seed, int base_channels = 12, int encoder_channels = 16,
                      bool with_seg = false);

// Image translator: 7x7 conv + two stride-2 convs down to a stride-4
// bottleneck, residual blocks, two 4x4 stride-2 deconvs, 7x7 conv, tanh.
// Instance norm throughout.
ModelState build_generator(uint64_t seed, int base_channels = 12, int n_res = 2);

// Patch discriminator: four 4x4 convs (two strided), scalar-channel
// real/fake score map. Trained with least-squares targets.
ModelState build_patch_discriminator(uint64_t seed, int base_channels = 12);

// Domain classifier over feature maps: four convs with leaky ReLU,
// two-channel logit map (channel 0 = source/synthetic, 1 = target/real).
ModelState build_domain_classifier(uint64_t seed, int in_channels, int base_channels = 16);

// ---- forward passes ------------------------------------------------------

struct SfcnOut {
  Var density;     // (1, H/8, W/8)
  Var seg_logits;  // (2, H, W) when requested, otherwise undefined
};

// Runs the four directional passes (down, up, left-to-right, right-to-left)
// in sequence over a feature map. Exposed separately so the encoder can be
// probed in isolation.
Var spatial_encoder(const Var& f, const ModelState& sfcn);

// image: (3, H, W) with H and W divisible by 8; throws ShapeError telling
// the caller to pad otherwise.
SfcnOut sfcn_forward(const Var& image, const ModelState& sfcn, bool with_seg = false);

// Full translation: (3, H, W) -> (3, H, W) in [-1, 1] after tanh.
// H and W must be divisible by 4.
Var generator_forward(const Var& image, const ModelState& gen);

// Stride-4 bottleneck feature map (the encoder half, residual blocks
// included). This is what feature-level adversarial learning consumes.
Var generator_encode(const Var& image, const ModelState& gen);

// image -> (1, h, w) patch score map.
Var discriminator_forward(const Var& image, const ModelState& disc);

// feature map -> (2, h, w) domain logit map.
Var domain_classifier_forward(const Var& f, const ModelState& dc);

// Maps pixel values from [0,1] to the generator's tanh range [-1,1] and back.
Var to_signed(const Var& img01);
Var to_unit(const Var& img11);

}  // namespace crowdlab::nn
