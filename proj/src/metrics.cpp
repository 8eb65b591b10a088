#include "crowdlab/metrics.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "crowdlab/common.hpp"
#include "crowdlab/labels.hpp"
#include "crowdlab/losses.hpp"
#include "crowdlab/regularizers.hpp"
#include "json.hpp"

namespace crowdlab::metric {

CountErrors count_errors(const std::vector<double>& gt, const std::vector<double>& pred) {
  if (gt.empty()) throw ArgumentError("count_errors: empty input");
  if (gt.size() != pred.size())
    throw ArgumentError(cat("count_errors: ", gt.size(), " ground truths vs ", pred.size(),
                            " predictions"));
  double abs_acc = 0.0, sq_acc = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double e = pred[i] - gt[i];
    abs_acc += std::fabs(e);
    sq_acc += e * e;
  }
  const double n = static_cast<double>(gt.size());
  return {abs_acc / n, std::sqrt(sq_acc / n)};
}

double psnr(const Tensor& gt, const Tensor& pred, double lnf) {
  if (!gt.same_shape(pred))
    throw ShapeError(cat("psnr: shape mismatch ", shape_str(gt), " vs ", shape_str(pred)));
  if (gt.numel() == 0) throw ArgumentError("psnr: empty maps");
  if (!(lnf > 0.0)) throw ArgumentError(cat("psnr: bad label normalization factor ", lnf));
  double mse = 0.0;
  for (std::size_t i = 0; i < gt.numel(); ++i) {
    const double e = gt[i] - pred[i];
    mse += e * e;
  }
  mse /= static_cast<double>(gt.numel());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  const double peak = std::max({gt.max(), pred.max(), 0.01 * lnf});
  return 10.0 * std::log10(peak * peak / mse);
}

namespace {

Tensor as_chw(const Tensor& t, const char* what) {
  if (t.rank() == 3) return t;
  if (t.rank() == 2) {
    Tensor out({1, t.dim(0), t.dim(1)});
    for (std::size_t i = 0; i < t.numel(); ++i) out[i] = t[i];
    return out;
  }
  throw ShapeError(cat(what, ": expected (H,W) or (C,H,W), got ", shape_str(t)));
}

}  // namespace

double ssim(const Tensor& gt, const Tensor& pred, double peak) {
  Tensor a = as_chw(gt, "ssim");
  Tensor b = as_chw(pred, "ssim");
  return loss::ssim_index(nn::Var::constant(a), nn::Var::constant(b), peak).value()[0];
}

SegIou seg_iou(const Tensor& pred_mask, const Tensor& gt_mask) {
  if (pred_mask.rank() != 2 || !pred_mask.same_shape(gt_mask))
    throw ShapeError(cat("seg_iou: expected matching (H,W) masks, got ",
                         shape_str(pred_mask), " vs ", shape_str(gt_mask)));
  int64_t inter[2] = {0, 0}, uni[2] = {0, 0};
  for (std::size_t i = 0; i < pred_mask.numel(); ++i) {
    const double p = pred_mask[i], g = gt_mask[i];
    if ((p != 0.0 && p != 1.0) || (g != 0.0 && g != 1.0))
      throw ArgumentError("seg_iou: masks must be exactly 0/1");
    for (int cls = 0; cls < 2; ++cls) {
      const bool pc = p == static_cast<double>(cls);
      const bool gc = g == static_cast<double>(cls);
      inter[cls] += pc && gc;
      uni[cls] += pc || gc;
    }
  }
  SegIou out;
  out.iou_bg = uni[0] == 0 ? 1.0 : static_cast<double>(inter[0]) / static_cast<double>(uni[0]);
  out.iou_fg = uni[1] == 0 ? 1.0 : static_cast<double>(inter[1]) / static_cast<double>(uni[1]);
  out.miou = 0.5 * (out.iou_bg + out.iou_fg);
  return out;
}

namespace {

Tensor flatten_density(const Tensor& d, const char* what) {
  if (d.rank() == 2) return d;
  if (d.rank() == 3 && d.dim(0) == 1) {
    Tensor out({d.dim(1), d.dim(2)});
    for (std::size_t i = 0; i < d.numel(); ++i) out[i] = d[i];
    return out;
  }
  throw ShapeError(cat(what, ": expected (h,w) or (1,h,w) density, got ", shape_str(d)));
}

nlohmann::json num_or_null(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

std::string csv_num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace

EvalReport evaluate_with(const PredictFn& predict, const std::string& root,
                         const data::Manifest& m, const std::vector<int>& ids,
                         const EvalOptions& opt) {
  if (ids.empty()) throw ArgumentError("evaluate_with: no sample ids");
  if (opt.density_clip && !(*opt.density_clip > 0.0))
    throw ArgumentError("evaluate_with: density_clip must be positive");

  std::ofstream csv;
  if (!opt.out_dir.empty()) {
    std::filesystem::create_directories(opt.out_dir);
    csv.open(opt.out_dir + "/per_sample.csv");
    if (!csv.good())
      throw IoError(cat("evaluate_with: cannot write to '", opt.out_dir, "'"));
    csv << "id,gt_count,pred_count,psnr,ssim\n";
  }

  std::vector<double> gt_counts, pred_counts;
  double psnr_acc = 0.0, ssim_acc = 0.0, bg_acc = 0.0, fg_acc = 0.0;
  int n_seg = 0;
  for (int id : ids) {
    if (id < 0 || id >= static_cast<int>(m.records.size()))
      throw ArgumentError(cat("evaluate_with: id ", id, " outside manifest of ",
                              m.records.size(), " records"));
    const data::ManifestRecord& rec = m.records[static_cast<std::size_t>(id)];
    Tensor img = data::load_image(root, rec);
    const int h = img.dim(1), w = img.dim(2);

    PredictOut pr = predict(rec, img);
    Tensor pred8 = flatten_density(pr.density, "evaluate_with");
    if (pred8.dim(0) != h / 8 || pred8.dim(1) != w / 8)
      throw ShapeError(cat("evaluate_with: predicted density ", shape_str(pred8),
                           " does not match image ", h, "x", w, " at stride 8"));
    if (opt.density_clip) pred8 = reg::density_clip(pred8, *opt.density_clip);

    data::LoadedLabel lbl = data::load_label(root, rec);
    labels::DensityMap gt_full =
        labels::density_from_dots(lbl.dots, h, w, opt.sigma, opt.lnf);
    Tensor gt8 = sum_pool(gt_full.values, 8);

    const double gt_count = static_cast<double>(lbl.count);
    const double pred_count = pred8.sum() / opt.lnf;
    gt_counts.push_back(gt_count);
    pred_counts.push_back(pred_count);

    const double peak = std::max({gt8.max(), pred8.max(), 0.01 * opt.lnf});
    const double sample_psnr = psnr(gt8, pred8, opt.lnf);
    const double sample_ssim = ssim(gt8, pred8, peak);
    psnr_acc += sample_psnr;
    ssim_acc += sample_ssim;

    if (opt.with_seg) {
      if (!pr.seg_mask) throw ContractError("evaluate_with: seg requested but not predicted");
      Tensor gt_mask = data::load_mask(root, rec);
      SegIou iou = seg_iou(*pr.seg_mask, gt_mask);
      bg_acc += iou.iou_bg;
      fg_acc += iou.iou_fg;
      ++n_seg;
    }
    if (csv.is_open()) {
      csv << id << "," << csv_num(gt_count) << "," << csv_num(pred_count) << ","
          << csv_num(sample_psnr) << "," << csv_num(sample_ssim) << "\n";
    }
  }

  EvalReport rep;
  CountErrors ce = count_errors(gt_counts, pred_counts);
  rep.mae = ce.mae;
  rep.mse = ce.mse;
  const double n = static_cast<double>(ids.size());
  rep.psnr = psnr_acc / n;
  rep.ssim = ssim_acc / n;
  rep.n_samples = static_cast<int>(ids.size());
  if (n_seg > 0) {
    rep.has_seg = true;
    rep.iou_bg = bg_acc / n_seg;
    rep.iou_fg = fg_acc / n_seg;
    rep.miou = 0.5 * (rep.iou_bg + rep.iou_fg);
  }

  if (!opt.out_dir.empty()) {
    nlohmann::json j{{"mae", rep.mae},
                     {"mse", rep.mse},
                     {"psnr", num_or_null(rep.psnr)},
                     {"ssim", rep.ssim},
                     {"iou_fg", rep.has_seg ? nlohmann::json(rep.iou_fg) : nullptr},
                     {"iou_bg", rep.has_seg ? nlohmann::json(rep.iou_bg) : nullptr},
                     {"miou", rep.has_seg ? nlohmann::json(rep.miou) : nullptr},
                     {"n_samples", rep.n_samples}};
    std::ofstream jf(opt.out_dir + "/eval_report.json");
    if (!jf.good()) throw IoError(cat("evaluate_with: cannot write report to '", opt.out_dir, "'"));
    jf << j.dump(2) << "\n";
  }
  return rep;
}

EvalReport evaluate_model(const nn::ModelState& sfcn, const std::string& root,
                          const data::Manifest& m, const std::vector<int>& ids,
                          const EvalOptions& opt) {
  PredictFn fn = [&](const data::ManifestRecord&, const Tensor& img) {
    nn::Var v = nn::Var::constant(img);
    nn::SfcnOut out = nn::sfcn_forward(v, sfcn, opt.with_seg);
    PredictOut po;
    po.density = out.density.value();
    if (opt.with_seg) {
      const Tensor& lg = out.seg_logits.value();
      Tensor mask({lg.dim(1), lg.dim(2)});
      for (int y = 0; y < lg.dim(1); ++y)
        for (int x = 0; x < lg.dim(2); ++x)
          mask.at(y, x) = lg.at(1, y, x) > lg.at(0, y, x) ? 1.0 : 0.0;
      po.seg_mask = mask;
    }
    return po;
  };
  return evaluate_with(fn, root, m, ids, opt);
}

}  // namespace crowdlab::metric
