#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "crowdlab/dataset.hpp"
#include "crowdlab/nets.hpp"
#include "crowdlab/tensor.hpp"

namespace crowdlab::metric {

// Count-level errors: mae is the mean absolute error; mse follows the
// counting-benchmark convention of reporting the root of the mean squared
// error under that name.
struct CountErrors {
  double mae = 0;
  double mse = 0;
};
CountErrors count_errors(const std::vector<double>& gt, const std::vector<double>& pred);

// Peak signal-to-noise ratio between two maps. The peak is the largest value
// in either map, floored at 0.01 * lnf so near-empty density maps are not
// scored against a vanishing range. Identical maps return +infinity.
double psnr(const Tensor& gt, const Tensor& pred, double lnf = 100.0);

// Structural similarity as a plain number; accepts (H,W) or (C,H,W).
double ssim(const Tensor& gt, const Tensor& pred, double peak = 1.0);

// Per-class intersection-over-union of binary masks; a class absent from
// both maps scores 1.
struct SegIou {
  double iou_bg = 0;
  double iou_fg = 0;
  double miou = 0;
};
SegIou seg_iou(const Tensor& pred_mask, const Tensor& gt_mask);

struct EvalOptions {
  double lnf = 100.0;
  double sigma = 4.0;
  bool with_seg = false;
  std::optional<double> density_clip;  // per-pixel ceiling applied to predictions
  std::string out_dir;  // when non-empty: per_sample.csv and eval_report.json
};

struct EvalReport {
  double mae = 0, mse = 0, psnr = 0, ssim = 0;
  bool has_seg = false;
  double iou_bg = 0, iou_fg = 0, miou = 0;
  int n_samples = 0;
};

// The prediction half of evaluation, injectable for testing: given a
// manifest record and its loaded image, produce a stride-8 density map
// (1,H/8,W/8) or (H/8,W/8) and optionally a full-resolution binary mask.
struct PredictOut {
  Tensor density;
  std::optional<Tensor> seg_mask;
};
using PredictFn = std::function<PredictOut(const data::ManifestRecord&, const Tensor&)>;

// Walks `ids` through the manifest, compares predicted counts against dot
// labels and predicted maps against rendered density (pooled to stride 8),
// and aggregates. Per-sample rows go to out_dir/per_sample.csv, the summary
// to out_dir/eval_report.json when out_dir is set.
EvalReport evaluate_with(const PredictFn& predict, const std::string& root,
                         const data::Manifest& m, const std::vector<int>& ids,
                         const EvalOptions& opt);

// Standard path: run the counter on each image.
EvalReport evaluate_model(const nn::ModelState& sfcn, const std::string& root,
                          const data::Manifest& m, const std::vector<int>& ids,
                          const EvalOptions& opt);

}  // namespace crowdlab::metric
