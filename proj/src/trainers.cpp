#include "crowdlab/trainers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <utility>

#include "crowdlab/checkpoint.hpp"
#include "crowdlab/losses.hpp"
#include "crowdlab/metrics.hpp"
#include "crowdlab/optim.hpp"
#include "crowdlab/png_io.hpp"
#include "crowdlab/regularizers.hpp"
#include "crowdlab/rng.hpp"

namespace crowdlab::train {

namespace O = nn::ops;
using nn::Var;

namespace {

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::uint64_t sub_seed(std::uint64_t seed, const char* tag) {
  const std::uint64_t h = fnv1a64(std::string(tag));
  return fnv1a64(&seed, sizeof(seed), h);
}

// Per-record cache of decoded images and, for labeled sources, full-resolution
// density maps and masks. Bounded; wholesale eviction keeps the worst case
// predictable. Unlabeled caches never touch label files.
struct SampleCache {
  SampleCache(std::string r, bool lab, bool mask, double sg, double ln)
      : root(std::move(r)), labeled(lab), want_mask(mask), sigma(sg), lnf(ln) {}

  std::string root;
  bool labeled = false;
  bool want_mask = false;
  double sigma = 4.0;
  double lnf = 100.0;

  struct Entry {
    Tensor image;    // (3,H,W)
    Tensor density;  // (H,W) when labeled
    Tensor mask;     // (H,W) when labeled and requested
  };
  std::size_t cap = 48;
  std::map<int, Entry> entries;

  const Entry& get(const data::Manifest& m, int id) {
    if (id < 0 || id >= static_cast<int>(m.records.size()))
      throw ArgumentError(cat("record id ", id, " out of range 0..", m.records.size() - 1));
    const auto it = entries.find(id);
    if (it != entries.end()) return it->second;
    if (entries.size() >= cap) entries.clear();
    const auto& rec = m.records[static_cast<std::size_t>(id)];
    Entry e;
    e.image = data::load_image(root, rec);
    if (labeled) {
      const auto lab = data::load_label(root, rec);
      e.density = labels::density_from_dots(lab.dots, e.image.dim(1), e.image.dim(2), sigma,
                                            lnf)
                      .values;
      if (want_mask) e.mask = data::load_mask(root, rec);
    }
    return entries.emplace(id, std::move(e)).first->second;
  }
};

struct CropBox {
  int y0 = 0, x0 = 0, h = 0, w = 0;
  bool cropped = false;
};

// 8-aligned square window; falls back to the full image when it doesn't fit.
CropBox choose_crop(int H, int W, int crop, Rng& rng) {
  if (crop <= 0 || H < crop || W < crop) return {0, 0, H, W, false};
  const int ymax = (H - crop) / 8, xmax = (W - crop) / 8;
  const int y0 = 8 * static_cast<int>(rng.uniform_int(0, ymax));
  const int x0 = 8 * static_cast<int>(rng.uniform_int(0, xmax));
  return {y0, x0, crop, crop, true};
}

Tensor crop2(const Tensor& t, const CropBox& b) {
  if (!b.cropped) return t;
  Tensor out({b.h, b.w});
  for (int y = 0; y < b.h; ++y)
    for (int x = 0; x < b.w; ++x) out.at(y, x) = t.at(b.y0 + y, b.x0 + x);
  return out;
}

Tensor crop3(const Tensor& t, const CropBox& b) {
  if (!b.cropped) return t;
  const int C = t.dim(0);
  Tensor out({C, b.h, b.w});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < b.h; ++y)
      for (int x = 0; x < b.w; ++x) out.at(c, y, x) = t.at(c, b.y0 + y, b.x0 + x);
  return out;
}

Tensor lift1(const Tensor& hw) {
  Tensor out({1, hw.dim(0), hw.dim(1)});
  std::copy(hw.data(), hw.data() + hw.numel(), out.data());
  return out;
}

// Cropping the full-image density keeps mass that leaks into the window from
// outside dots and drops what leaks out, i.e. the exact restriction of the
// full label to the window.
Tensor stride8_target(const Tensor& density_crop, double clip) {
  Tensor gt8 = sum_pool(density_crop, 8);
  if (clip > 0) gt8 = reg::density_clip(gt8, clip);
  return lift1(gt8);
}

Tensor unit_of(const Tensor& signed_img) {
  Tensor u = signed_img;
  for (std::size_t i = 0; i < u.numel(); ++i) u[i] = 0.5 * (u[i] + 1.0);
  return u;
}

double pixel_variance(const Tensor& t) {
  if (t.numel() == 0) return 0.0;
  const double mu = t.mean();
  double s = 0.0;
  for (std::size_t i = 0; i < t.numel(); ++i) {
    const double d = t[i] - mu;
    s += d * d;
  }
  return s / static_cast<double>(t.numel());
}

void init_from(nn::ModelState& dst, const nn::ModelState& src) {
  if (dst.arch_id != src.arch_id)
    throw ContractError(
        cat("initial weights are ", src.arch_id, ", expected ", dst.arch_id));
  for (auto& [name, v] : dst.params) {
    if (!src.has_param(name))
      throw ContractError(cat("initial weights lack parameter ", name));
    const Tensor& sv = src.param(name).value();
    if (!sv.same_shape(v.value()))
      throw ContractError(cat("initial parameter ", name, " has shape ", shape_str(sv),
                              ", expected ", shape_str(v.value())));
    v.mutable_value() = sv;
  }
}

Var supervised_loss(const SampleCache::Entry& e, const CropBox& b, const cfg::Config& c,
                    const nn::ModelState& model) {
  const Tensor img = crop3(e.image, b);
  const Tensor gt = stride8_target(crop2(e.density, b), c.density_clip);
  const auto out = nn::sfcn_forward(Var::constant(img), model, c.with_seg);
  Var l = loss::counting_mse(out.density, Var::constant(gt));
  if (c.with_seg)
    l = O::add(l, O::mul_scalar(loss::seg_ce(out.seg_logits, crop2(e.mask, b)), c.mtl_seg));
  return l;
}

}  // namespace

RunPaths prepare_run_dir(const std::string& runs_root, const std::string& run_id,
                         const cfg::Config& c) {
  namespace fs = std::filesystem;
  RunPaths p;
  p.run_dir = (fs::path(runs_root) / run_id).string();
  p.config_path = p.run_dir + "/config.json";
  p.records_path = p.run_dir + "/records.jsonl";
  p.ckpt_dir = p.run_dir + "/ckpt";
  p.eval_dir = p.run_dir + "/eval";
  p.translate_dir = p.run_dir + "/translate";
  std::error_code ec;
  fs::create_directories(p.ckpt_dir, ec);
  fs::create_directories(p.eval_dir, ec);
  fs::create_directories(p.translate_dir, ec);
  if (!fs::is_directory(p.ckpt_dir) || !fs::is_directory(p.translate_dir))
    throw IoError(cat("cannot create run directory ", p.run_dir));
  cfg::write_config_file(p.config_path, c);
  std::ofstream(p.records_path, std::ios::trunc);  // drop records of a stale same-id run
  return p;
}

void append_record(const std::string& records_path, const nlohmann::json& record) {
  std::ofstream f(records_path, std::ios::app);
  if (!f.good()) throw IoError(cat("cannot append to ", records_path));
  f << record.dump() << "\n";
}

FitResult train_supervised(const std::string& root, const data::Manifest& m,
                           const labels::Split& split, const cfg::Config& c,
                           const std::string& runs_root, const std::string& run_id,
                           const nn::ModelState* init) {
  if (split.train_ids.empty()) throw ArgumentError("train: empty training set");
  if (split.val_ids.empty())
    throw ArgumentError("train: empty validation set; carve one before fitting");
  const RunPaths run = prepare_run_dir(runs_root, run_id, c);
  nn::ModelState model =
      nn::build_sfcn(c.seed, c.base_channels, c.encoder_channels, c.with_seg);
  if (init) init_from(model, *init);
  nn::Adam opt;
  SampleCache cache{root, true, c.with_seg, c.sigma, c.lnf};
  metric::EvalOptions ev;
  ev.lnf = c.lnf;
  ev.sigma = c.sigma;
  if (c.density_clip > 0) ev.density_clip = c.density_clip;
  const std::string hash = cfg::config_hash(c);
  FitResult res;
  res.best_val_mae = std::numeric_limits<double>::infinity();
  std::int64_t step = 0;
  for (int e = 0; e < c.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr_e = c.lr * std::pow(c.dr, e);
    std::vector<int> order = split.train_ids;
    Rng shuffle_rng = Rng::derive(c.seed, "epoch-shuffle", static_cast<std::uint64_t>(e));
    shuffle_rng.shuffle(order);
    if (static_cast<int>(order.size()) > c.batch)
      order.resize(static_cast<std::size_t>(c.batch));
    Rng crop_rng = Rng::derive(c.seed, "crop", static_cast<std::uint64_t>(e));
    double total = 0.0;
    for (const int id : order) {
      const auto& entry = cache.get(m, id);
      const CropBox b = choose_crop(entry.image.dim(1), entry.image.dim(2), c.crop, crop_rng);
      model.zero_grad();
      const Var l = supervised_loss(entry, b, c, model);
      const double lv = l.value().at();
      if (!std::isfinite(lv)) {
        append_record(run.records_path, {{"event", "divergence"}, {"epoch", e}});
        throw Error(cat("training diverged: non-finite loss at epoch ", e));
      }
      l.backward();
      opt.step(model, lr_e);
      total += lv;
      ++step;
    }
    const double train_loss = total / static_cast<double>(order.size());
    const metric::EvalReport rep = metric::evaluate_model(model, root, m, split.val_ids, ev);
    res.train_losses.push_back(train_loss);
    res.val_maes.push_back(rep.mae);
    append_record(run.records_path, {{"epoch", e},
                                     {"train_loss", train_loss},
                                     {"lr", lr_e},
                                     {"val_mae", rep.mae},
                                     {"seconds", seconds_since(t0)}});
    nn::save_checkpoint(run.ckpt_dir + "/last.ckpt", model, &opt, step, hash);
    if (rep.mae < res.best_val_mae || res.best_epoch < 0) {
      res.best_val_mae = rep.mae;
      res.best_epoch = e;
      nn::save_checkpoint(run.ckpt_dir + "/best.ckpt", model, &opt, step, hash);
    }
  }
  metric::EvalOptions final_ev = ev;
  final_ev.out_dir = run.eval_dir;
  final_ev.with_seg = c.with_seg;
  metric::evaluate_model(model, root, m, split.val_ids, final_ev);
  res.model = std::move(model);
  res.best_ckpt = run.ckpt_dir + "/best.ckpt";
  res.last_ckpt = run.ckpt_dir + "/last.ckpt";
  return res;
}

PretrainFinetuneResult pretrain_then_finetune(
    const std::string& source_root, const data::Manifest& source_m,
    const labels::Split& source_split, const std::string& target_root,
    const data::Manifest& target_m, const labels::Split& target_split,
    const cfg::Config& c, const std::string& runs_root, const std::string& run_id) {
  if (c.pretrain_epochs < 1)
    throw ConfigError("pretrain_epochs must be at least 1 for the two-stage scheme");
  cfg::Config pre = c;
  pre.epochs = c.pretrain_epochs;
  PretrainFinetuneResult r;
  r.pretrain = train_supervised(source_root, source_m, source_split, pre, runs_root,
                                run_id + "/pretrain");
  const nn::Checkpoint handoff = nn::load_checkpoint(r.pretrain.best_ckpt);
  r.finetune = train_supervised(target_root, target_m, target_split, c, runs_root,
                                run_id + "/finetune", &handoff.model);
  return r;
}

DaResult train_da_joint(const std::string& synth_root, const data::Manifest& synth_m,
                        const labels::Split& synth_split, const std::string& real_root,
                        const data::Manifest& real_m, const std::vector<int>& real_ids,
                        const cfg::Config& c, const std::string& runs_root,
                        const std::string& run_id) {
  if (synth_split.train_ids.empty()) throw ArgumentError("adapt: empty source training set");
  if (synth_split.val_ids.empty()) throw ArgumentError("adapt: empty source validation set");
  if (c.crop > 0 && c.crop < 16)
    throw ConfigError(cat("adapt: crop ", c.crop,
                          " is smaller than the 11x11 similarity window; use crop >= 16"));
  const RunPaths run = prepare_run_dir(runs_root, run_id, c);

  std::vector<int> pool = synth_split.train_ids;
  int n_filtered_out = 0;
  if (!c.rule.empty()) {
    const reg::FilterRule rule = reg::load_filter_rule(c.rule);
    const reg::FilterResult fr = reg::filter_manifest(rule, synth_m, pool);
    reg::write_filter_log(run.run_dir + "/filter_log.json", rule, fr);
    n_filtered_out = static_cast<int>(fr.rejected.size());
    if (fr.kept.empty())
      throw ConfigError(cat("adapt: admission rule '", rule.name,
                            "' rejected every source training record"));
    pool = fr.kept;
  }
  std::vector<int> real_pool = real_ids;
  if (real_pool.empty()) {
    real_pool.resize(real_m.records.size());
    std::iota(real_pool.begin(), real_pool.end(), 0);
  }
  if (real_pool.empty()) throw ArgumentError("adapt: no target records");
  for (const int id : real_pool)
    if (id < 0 || id >= static_cast<int>(real_m.records.size()))
      throw ArgumentError(cat("adapt: target id ", id, " out of range"));

  nn::ModelState sfcn = nn::build_sfcn(c.seed, c.base_channels, c.encoder_channels, c.with_seg);
  nn::ModelState g_sr = nn::build_generator(sub_seed(c.seed, "gen-sr"), c.gen_channels, c.n_res);
  nn::ModelState g_rs = nn::build_generator(sub_seed(c.seed, "gen-rs"), c.gen_channels, c.n_res);
  nn::ModelState d_r = nn::build_patch_discriminator(sub_seed(c.seed, "disc-r"), c.disc_channels);
  nn::ModelState d_s = nn::build_patch_discriminator(sub_seed(c.seed, "disc-s"), c.disc_channels);
  nn::ModelState d_dc = nn::build_domain_classifier(
      sub_seed(c.seed, "dom-cls"), g_sr.hparam("bottleneck_channels"), c.dc_channels);
  nn::Adam opt_sfcn, opt_gsr, opt_grs, opt_dr, opt_ds, opt_dc;

  SampleCache synth_cache{synth_root, true, c.with_seg, c.sigma, c.lnf};
  SampleCache real_cache{real_root, false, false, c.sigma, c.lnf};

  metric::EvalOptions ev;
  ev.lnf = c.lnf;
  ev.sigma = c.sigma;
  if (c.density_clip > 0) ev.density_clip = c.density_clip;
  const std::string hash = cfg::config_hash(c);
  DaResult res;
  res.best_val_mae = std::numeric_limits<double>::infinity();
  res.n_filtered_out = n_filtered_out;
  int collapse_streak = 0;
  std::int64_t step = 0;

  for (int e = 0; e < c.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr_e = c.lr * std::pow(c.dr, e);
    std::vector<int> s_order = pool;
    std::vector<int> r_order = real_pool;
    {
      Rng rs = Rng::derive(c.seed, "adapt-source-order", static_cast<std::uint64_t>(e));
      rs.shuffle(s_order);
      Rng rr = Rng::derive(c.seed, "adapt-target-order", static_cast<std::uint64_t>(e));
      rr.shuffle(r_order);
    }
    Rng crop_rng = Rng::derive(c.seed, "adapt-crop", static_cast<std::uint64_t>(e));
    double sum_joint = 0, sum_cnt = 0, sum_trans = 0, sum_adv = 0, sum_d = 0;
    double sum_ssim = 0, sum_var = 0;
    for (int k = 0; k < c.batch; ++k) {
      const int sid = s_order[static_cast<std::size_t>(k) % s_order.size()];
      const int rid = r_order[static_cast<std::size_t>(k) % r_order.size()];
      const auto& se = synth_cache.get(synth_m, sid);
      const auto& re = real_cache.get(real_m, rid);
      const CropBox sb = choose_crop(se.image.dim(1), se.image.dim(2), c.crop, crop_rng);
      const CropBox rb = choose_crop(re.image.dim(1), re.image.dim(2), c.crop, crop_rng);
      const Tensor s_img = crop3(se.image, sb);
      const Tensor r_img = crop3(re.image, rb);
      const Tensor gt = stride8_target(crop2(se.density, sb), c.density_clip);

      // translator/counter phase
      const Var s01 = Var::constant(s_img), r01 = Var::constant(r_img);
      const Var s = nn::to_signed(s01), r = nn::to_signed(r01);
      const Var fake_r = nn::generator_forward(s, g_sr);
      const Var fake_s = nn::generator_forward(r, g_rs);
      const Var rec_s = nn::generator_forward(fake_r, g_rs);
      const Var rec_r = nn::generator_forward(fake_s, g_sr);
      const loss::CycleGanLoss cg = loss::cycle_gan_loss(
          nn::discriminator_forward(fake_r, d_r), nn::discriminator_forward(fake_s, d_s), s,
          rec_s, r, rec_r, c.lambda_cycle);
      Var trans = cg.total;
      if (c.use_ssim_cycle)
        trans = O::add(trans,
                       loss::se_cycle_loss(s01, nn::to_unit(rec_s), r01, nn::to_unit(rec_r)));
      const auto out = nn::sfcn_forward(nn::to_unit(fake_r), sfcn, c.with_seg);
      Var cnt = loss::counting_mse(out.density, Var::constant(gt));
      if (c.with_seg)
        cnt = O::add(cnt, O::mul_scalar(loss::seg_ce(out.seg_logits, crop2(se.mask, sb)),
                                        c.mtl_seg));
      const Var f_r = nn::generator_encode(r, g_sr);
      const Var adv = loss::inverse_adv_loss(nn::domain_classifier_forward(f_r, d_dc));
      const loss::JointLoss jl = loss::joint_loss(cnt, trans, adv, c.alpha, c.beta, c.lambda_adv);
      const double jv = jl.total.value().at();
      if (!std::isfinite(jv)) {
        append_record(run.records_path, {{"event", "divergence"}, {"epoch", e}});
        throw Error(cat("adaptation diverged: non-finite joint loss at epoch ", e));
      }
      sfcn.zero_grad();
      g_sr.zero_grad();
      g_rs.zero_grad();
      jl.total.backward();
      opt_sfcn.step(sfcn, lr_e);
      opt_gsr.step(g_sr, lr_e);
      opt_grs.step(g_rs, lr_e);

      // discriminator phase, one step for one, on detached translations
      const Var f_s = nn::generator_encode(s, g_sr);
      const Var dl = O::add(
          loss::lsgan_disc_loss(nn::discriminator_forward(r, d_r),
                                nn::discriminator_forward(O::detach(fake_r), d_r)),
          loss::lsgan_disc_loss(nn::discriminator_forward(s, d_s),
                                nn::discriminator_forward(O::detach(fake_s), d_s)));
      const Var dcl =
          loss::domain_cls_loss(nn::domain_classifier_forward(O::detach(f_s), d_dc),
                                nn::domain_classifier_forward(O::detach(f_r), d_dc));
      const Var d_total = O::add(dl, dcl);
      const double dv = d_total.value().at();
      if (!std::isfinite(dv)) {
        append_record(run.records_path, {{"event", "divergence"}, {"epoch", e}});
        throw Error(cat("adaptation diverged: non-finite discriminator loss at epoch ", e));
      }
      d_r.zero_grad();
      d_s.zero_grad();
      d_dc.zero_grad();
      d_total.backward();
      opt_dr.step(d_r, c.d_lr);
      opt_ds.step(d_s, c.d_lr);
      opt_dc.step(d_dc, c.d_lr);

      sum_joint += jv;
      sum_cnt += jl.cnt_term.value().at();
      sum_trans += jl.trans_term.value().at();
      sum_adv += jl.adv_term.value().at();
      sum_d += dv;
      sum_ssim += 0.5 * (metric::ssim(s_img, unit_of(rec_s.value()), 1.0) +
                         metric::ssim(r_img, unit_of(rec_r.value()), 1.0));
      sum_var += pixel_variance(fake_r.value());
      ++step;
    }
    const double nb = static_cast<double>(c.batch);
    if (sum_var / nb < 1e-6) {
      if (++collapse_streak >= 3) {
        append_record(run.records_path, {{"event", "mode-collapse"}, {"epoch", e}});
        throw Error(cat("adaptation collapsed: translated pixel variance stayed below 1e-6 "
                        "for 3 consecutive epochs (epoch ",
                        e, ")"));
      }
    } else {
      collapse_streak = 0;
    }

    // translated-source validation; target labels stay untouched
    const auto predict = [&](const data::ManifestRecord&, const Tensor& img) {
      const Var fake = nn::generator_forward(nn::to_signed(Var::constant(img)), g_sr);
      const auto o = nn::sfcn_forward(nn::to_unit(fake), sfcn, false);
      return metric::PredictOut{o.density.value(), std::nullopt};
    };
    const metric::EvalReport rep =
        metric::evaluate_with(predict, synth_root, synth_m, synth_split.val_ids, ev);
    res.train_losses.push_back(sum_joint / nb);
    res.val_maes.push_back(rep.mae);
    res.recon_ssim = sum_ssim / nb;
    append_record(run.records_path, {{"epoch", e},
                                     {"joint_loss", sum_joint / nb},
                                     {"cnt", sum_cnt / nb},
                                     {"trans", sum_trans / nb},
                                     {"adv", sum_adv / nb},
                                     {"disc_loss", sum_d / nb},
                                     {"lr", lr_e},
                                     {"val_mae", rep.mae},
                                     {"recon_ssim", res.recon_ssim},
                                     {"seconds", seconds_since(t0)}});
    nn::save_checkpoint(run.ckpt_dir + "/last_sfcn.ckpt", sfcn, &opt_sfcn, step, hash);
    nn::save_checkpoint(run.ckpt_dir + "/last_gsr.ckpt", g_sr, &opt_gsr, step, hash);
    nn::save_checkpoint(run.ckpt_dir + "/last_grs.ckpt", g_rs, &opt_grs, step, hash);
    if (rep.mae < res.best_val_mae || res.best_epoch < 0) {
      res.best_val_mae = rep.mae;
      res.best_epoch = e;
      nn::save_checkpoint(run.ckpt_dir + "/best_sfcn.ckpt", sfcn, &opt_sfcn, step, hash);
      nn::save_checkpoint(run.ckpt_dir + "/best_gsr.ckpt", g_sr, &opt_gsr, step, hash);
    }
  }

  {
    const auto predict = [&](const data::ManifestRecord&, const Tensor& img) {
      const Var fake = nn::generator_forward(nn::to_signed(Var::constant(img)), g_sr);
      const auto o = nn::sfcn_forward(nn::to_unit(fake), sfcn, false);
      return metric::PredictOut{o.density.value(), std::nullopt};
    };
    metric::EvalOptions final_ev = ev;
    final_ev.out_dir = run.eval_dir;
    metric::evaluate_with(predict, synth_root, synth_m, synth_split.val_ids, final_ev);
  }
  const int n_dump = std::min<int>(4, static_cast<int>(synth_split.val_ids.size()));
  for (int i = 0; i < n_dump; ++i) {
    const int id = synth_split.val_ids[static_cast<std::size_t>(i)];
    const auto& entry = synth_cache.get(synth_m, id);
    const Var fake = nn::generator_forward(nn::to_signed(Var::constant(entry.image)), g_sr);
    io::write_rgb8(run.translate_dir + "/val" + std::to_string(id) + "_source.png",
                   entry.image);
    io::write_rgb8(run.translate_dir + "/val" + std::to_string(id) + "_translated.png",
                   nn::to_unit(fake).value());
  }
  res.sfcn = std::move(sfcn);
  res.gen_sr = std::move(g_sr);
  res.gen_rs = std::move(g_rs);
  res.best_ckpt = run.ckpt_dir + "/best_sfcn.ckpt";
  return res;
}

}  // namespace crowdlab::train
