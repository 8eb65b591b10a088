#include "crowdlab/nets.hpp"

#include <cmath>

#include "crowdlab/common.hpp"
#include "crowdlab/rng.hpp"

namespace crowdlab::nn {

Var& ModelState::param(const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw ContractError(cat("model '", arch_id, "' has no parameter '", name, "'"));
  return it->second;
}

const Var& ModelState::param(const std::string& name) const {
  auto it = params.find(name);
  if (it == params.end()) throw ContractError(cat("model '", arch_id, "' has no parameter '", name, "'"));
  return it->second;
}

int ModelState::hparam(const std::string& name) const {
  auto it = hparams.find(name);
  if (it == hparams.end()) throw ContractError(cat("model '", arch_id, "' has no hyperparameter '", name, "'"));
  return it->second;
}

void ModelState::zero_grad() {
  for (auto& [name, v] : params) v.zero_grad();
}

int64_t ModelState::param_count() const {
  int64_t n = 0;
  for (const auto& [name, v] : params) n += static_cast<int64_t>(v.value().numel());
  return n;
}

namespace {

Tensor normal_init(Rng& rng, const std::vector<int>& shape, double stddev) {
  Tensor t(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, stddev);
  return t;
}

// He-style fan-in init for a conv weight whose trailing dims are the fan-in.
double he_std(const std::vector<int>& shape) {
  int64_t fan = 1;
  for (size_t i = 1; i < shape.size(); ++i) fan *= shape[i];
  return std::sqrt(2.0 / static_cast<double>(fan));
}

struct Builder {
  ModelState* s;
  Rng rng;

  Builder(ModelState* state, uint64_t seed) : s(state), rng(Rng::derive(seed, "init")) {}

  void conv(const std::string& name, int cout, int cin, int k, double std_scale = 1.0,
            bool bias = true, double bias_init = 0.0) {
    std::vector<int> wshape{cout, cin, k, k};
    s->params.emplace(name + ".w",
                      Var::leaf(normal_init(rng, wshape, std_scale * he_std(wshape)), true));
    if (bias) {
      Tensor b({cout}, bias_init);
      s->params.emplace(name + ".b", Var::leaf(b, true));
    }
  }

  void deconv(const std::string& name, int cin, int cout, int k, double std_scale = 1.0,
              bool bias = true) {
    // transpose-conv weight layout: (Cin, Cout, kh, kw)
    std::vector<int> wshape{cin, cout, k, k};
    s->params.emplace(name + ".w",
                      Var::leaf(normal_init(rng, wshape, std_scale * he_std(wshape)), true));
    if (bias) s->params.emplace(name + ".b", Var::leaf(Tensor({cout}, 0.0), true));
  }

  void inorm(const std::string& name, int c) {
    s->params.emplace(name + ".g", Var::leaf(Tensor({c}, 1.0), true));
    s->params.emplace(name + ".bt", Var::leaf(Tensor({c}, 0.0), true));
  }

  void line(const std::string& name, int c, int k, double std_scale) {
    std::vector<int> wshape{c, c, k};
    s->params.emplace(name + ".w",
                      Var::leaf(normal_init(rng, wshape, std_scale * he_std(wshape)), true));
  }
};

Var conv_b(const Var& x, const ModelState& s, const std::string& n, int stride, int pad) {
  return ops::conv2d(x, s.param(n + ".w"), s.param(n + ".b"), stride, pad);
}

Var conv_nb(const Var& x, const ModelState& s, const std::string& n, int stride, int pad) {
  return ops::conv2d(x, s.param(n + ".w"), Var(), stride, pad);
}

Var deconv_nb(const Var& x, const ModelState& s, const std::string& n, int stride, int pad) {
  return ops::conv2d_transpose(x, s.param(n + ".w"), Var(), stride, pad);
}

Var in_b(const Var& x, const ModelState& s, const std::string& n) {
  return ops::instance_norm(x, s.param(n + ".g"), s.param(n + ".bt"), 1e-5);
}

void require_chw(const Var& v, int channels, const char* what) {
  if (!v.defined()) throw ArgumentError(cat(what, ": undefined input"));
  const Tensor& t = v.value();
  if (t.rank() != 3)
    throw ShapeError(cat(what, ": expected rank-3 (C,H,W) input, got ", shape_str(t)));
  if (channels > 0 && t.dim(0) != channels)
    throw ShapeError(cat(what, ": expected ", channels, " channels, got ", shape_str(t)));
}

}  // namespace

ModelState build_sfcn(uint64_t seed, int base_channels, int encoder_channels, bool with_seg) {
  if (base_channels < 1 || encoder_channels < 1)
    throw ArgumentError("build_sfcn: channel widths must be positive");
  const int c = base_channels;
  ModelState s;
  s.arch_id = cat("sfcn/c", c, "-e", encoder_channels, with_seg ? "-seg" : "");
  s.hparams = {{"in_channels", 3}, {"out_stride", 8},   {"base", c},
               {"enc", encoder_channels}, {"with_seg", with_seg ? 1 : 0}};
  Builder b(&s, seed);
  // 10-conv backbone, three stride-2 stages -> total stride 8.
  b.conv("b01", c, 3, 3);
  b.conv("b02", c, c, 3);
  b.conv("b03", c, c, 3);
  b.conv("b04", 2 * c, c, 3);
  b.conv("b05", 2 * c, 2 * c, 3);
  b.conv("b06", 2 * c, 2 * c, 3);
  b.conv("b07", 4 * c, 2 * c, 3);
  b.conv("b08", 4 * c, 4 * c, 3);
  b.conv("b09", 4 * c, 4 * c, 3);
  b.conv("b10", 4 * c, 4 * c, 3);
  b.conv("reduce", encoder_channels, 4 * c, 1);
  // Directional line kernels; damped init keeps the additive recurrence stable.
  b.line("se.down", encoder_channels, 9, 0.5);
  b.line("se.up", encoder_channels, 9, 0.5);
  b.line("se.lr", encoder_channels, 9, 0.5);
  b.line("se.rl", encoder_channels, 9, 0.5);
  // Positive bias keeps the terminal ReLU live at init.
  b.conv("head", 1, encoder_channels, 1, 1.0, true, 0.5);
  if (with_seg) {
    b.deconv("seg1", encoder_channels, c, 4);
    b.deconv("seg2", c, c, 4);
    b.deconv("seg3", c, 2, 4);
  }
  return s;
}

ModelState build_generator(uint64_t seed, int base_channels, int n_res) {
  if (base_channels < 1 || n_res < 0)
    throw ArgumentError("build_generator: bad widths");
  const int c = base_channels;
  ModelState s;
  s.arch_id = cat("cygen/c", c, "-r", n_res);
  s.hparams = {{"in_channels", 3}, {"bottleneck_stride", 4}, {"base", c}, {"n_res", n_res},
               {"bottleneck_channels", 4 * c}};
  Builder b(&s, seed);
  // Biases are omitted wherever instance norm follows: the norm cancels any
  // per-channel shift exactly, so they would be dead weight.
  b.conv("enc1", c, 3, 7, 1.0, false);
  b.inorm("enc1", c);
  b.conv("enc2", 2 * c, c, 3, 1.0, false);
  b.inorm("enc2", 2 * c);
  b.conv("enc3", 4 * c, 2 * c, 3, 1.0, false);
  b.inorm("enc3", 4 * c);
  for (int i = 1; i <= n_res; ++i) {
    b.conv(cat("res", i, "a"), 4 * c, 4 * c, 3, 1.0, false);
    b.inorm(cat("res", i, "a"), 4 * c);
    b.conv(cat("res", i, "b"), 4 * c, 4 * c, 3, 0.5, false);
    b.inorm(cat("res", i, "b"), 4 * c);
  }
  b.deconv("dec1", 4 * c, 2 * c, 4, 1.0, false);
  b.inorm("dec1", 2 * c);
  b.deconv("dec2", 2 * c, c, 4, 1.0, false);
  b.inorm("dec2", c);
  // Small init keeps the first translations near mid-gray instead of noise.
  b.conv("out", 3, c, 7, 0.2, true);
  return s;
}

ModelState build_patch_discriminator(uint64_t seed, int base_channels) {
  if (base_channels < 1) throw ArgumentError("build_patch_discriminator: bad width");
  const int c = base_channels;
  ModelState s;
  s.arch_id = cat("patchd/c", c);
  s.hparams = {{"in_channels", 3}, {"base", c}};
  Builder b(&s, seed);
  b.conv("d1", c, 3, 4);
  b.conv("d2", 2 * c, c, 4);
  b.conv("d3", 2 * c, 2 * c, 4);
  b.conv("d4", 1, 2 * c, 4);
  return s;
}

ModelState build_domain_classifier(uint64_t seed, int in_channels, int base_channels) {
  if (in_channels < 1 || base_channels < 1)
    throw ArgumentError("build_domain_classifier: bad widths");
  const int c = base_channels;
  ModelState s;
  s.arch_id = cat("dclass/in", in_channels, "-c", c);
  s.hparams = {{"in_channels", in_channels}, {"base", c}};
  Builder b(&s, seed);
  b.conv("c1", c, in_channels, 3);
  b.conv("c2", c, c, 3);
  b.conv("c3", c, c, 3);
  b.conv("c4", 2, c, 1);
  return s;
}

Var spatial_encoder(const Var& f, const ModelState& sfcn) {
  require_chw(f, sfcn.hparam("enc"), "spatial_encoder");
  using ops::PassDir;
  Var h = ops::directional_pass(f, sfcn.param("se.down.w"), PassDir::kDown);
  h = ops::directional_pass(h, sfcn.param("se.up.w"), PassDir::kUp);
  h = ops::directional_pass(h, sfcn.param("se.lr.w"), PassDir::kLeftRight);
  h = ops::directional_pass(h, sfcn.param("se.rl.w"), PassDir::kRightLeft);
  return h;
}

SfcnOut sfcn_forward(const Var& image, const ModelState& sfcn, bool with_seg) {
  require_chw(image, 3, "sfcn_forward");
  const int h = image.value().dim(1), w = image.value().dim(2);
  if (h % 8 != 0 || w % 8 != 0)
    throw ShapeError(cat("sfcn_forward: input ", h, "x", w,
                         " is not divisible by the output stride 8; pad the image to a "
                         "multiple of 8 before calling"));
  if (with_seg && sfcn.hparam("with_seg") == 0)
    throw ContractError("sfcn_forward: model was built without a segmentation head");
  const double sl = 0.1;
  Var x = ops::leaky_relu(conv_b(image, sfcn, "b01", 1, 1), sl);
  x = ops::leaky_relu(conv_b(x, sfcn, "b02", 2, 1), sl);
  x = ops::leaky_relu(conv_b(x, sfcn, "b03", 1, 1), sl);
  x = ops::leaky_relu(conv_b(x, sfcn, "b04", 2, 1), sl);
  x = ops::leaky_relu(conv_b(x, sfcn, "b05", 1, 1), sl);
  x = ops::leaky_relu(conv_b(x, sfcn, "b06", 1, 1), sl);
  x = ops::leaky_relu(conv_b(x, sfcn, "b07", 2, 1), sl);
  x = ops::leaky_relu(conv_b(x, sfcn, "b08", 1, 1), sl);
  x = ops::leaky_relu(conv_b(x, sfcn, "b09", 1, 1), sl);
  x = ops::leaky_relu(conv_b(x, sfcn, "b10", 1, 1), sl);
  x = ops::leaky_relu(conv_b(x, sfcn, "reduce", 1, 0), sl);
  x = spatial_encoder(x, sfcn);
  SfcnOut out;
  out.density = ops::relu(conv_b(x, sfcn, "head", 1, 0));
  if (with_seg) {
    Var g = ops::leaky_relu(
        ops::conv2d_transpose(x, sfcn.param("seg1.w"), sfcn.param("seg1.b"), 2, 1), sl);
    g = ops::leaky_relu(
        ops::conv2d_transpose(g, sfcn.param("seg2.w"), sfcn.param("seg2.b"), 2, 1), sl);
    out.seg_logits =
        ops::conv2d_transpose(g, sfcn.param("seg3.w"), sfcn.param("seg3.b"), 2, 1);
  }
  return out;
}

Var generator_encode(const Var& image, const ModelState& gen) {
  require_chw(image, 3, "generator_encode");
  const int h = image.value().dim(1), w = image.value().dim(2);
  if (h % 4 != 0 || w % 4 != 0)
    throw ShapeError(cat("generator_encode: input ", h, "x", w,
                         " is not divisible by the bottleneck stride 4; pad to a multiple of 4"));
  Var x = ops::relu(in_b(conv_nb(image, gen, "enc1", 1, 3), gen, "enc1"));
  x = ops::relu(in_b(conv_nb(x, gen, "enc2", 2, 1), gen, "enc2"));
  x = ops::relu(in_b(conv_nb(x, gen, "enc3", 2, 1), gen, "enc3"));
  const int n_res = gen.hparam("n_res");
  for (int i = 1; i <= n_res; ++i) {
    Var r = ops::relu(in_b(conv_nb(x, gen, cat("res", i, "a"), 1, 1), gen, cat("res", i, "a")));
    r = in_b(conv_nb(r, gen, cat("res", i, "b"), 1, 1), gen, cat("res", i, "b"));
    x = ops::add(x, r);
  }
  return x;
}

Var generator_forward(const Var& image, const ModelState& gen) {
  Var x = generator_encode(image, gen);
  x = ops::relu(in_b(deconv_nb(x, gen, "dec1", 2, 1), gen, "dec1"));
  x = ops::relu(in_b(deconv_nb(x, gen, "dec2", 2, 1), gen, "dec2"));
  return ops::tanh_(conv_b(x, gen, "out", 1, 3));
}

Var discriminator_forward(const Var& image, const ModelState& disc) {
  require_chw(image, 3, "discriminator_forward");
  const double sl = 0.2;
  Var x = ops::leaky_relu(conv_b(image, disc, "d1", 2, 1), sl);
  x = ops::leaky_relu(conv_b(x, disc, "d2", 2, 1), sl);
  x = ops::leaky_relu(conv_b(x, disc, "d3", 1, 1), sl);
  return conv_b(x, disc, "d4", 1, 1);
}

Var domain_classifier_forward(const Var& f, const ModelState& dc) {
  require_chw(f, dc.hparam("in_channels"), "domain_classifier_forward");
  const double sl = 0.2;
  Var x = ops::leaky_relu(conv_b(f, dc, "c1", 2, 1), sl);
  x = ops::leaky_relu(conv_b(x, dc, "c2", 2, 1), sl);
  x = ops::leaky_relu(conv_b(x, dc, "c3", 1, 1), sl);
  return conv_b(x, dc, "c4", 1, 0);
}

Var to_signed(const Var& img01) {
  return ops::add_scalar(ops::mul_scalar(img01, 2.0), -1.0);
}

Var to_unit(const Var& img11) {
  return ops::add_scalar(ops::mul_scalar(img11, 0.5), 0.5);
}

}  // namespace crowdlab::nn
