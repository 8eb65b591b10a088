#pragma once

#include <string>
#include <vector>

#include "crowdlab/config.hpp"
#include "crowdlab/dataset.hpp"
#include "crowdlab/labels.hpp"
#include "crowdlab/nets.hpp"
#include "json.hpp"

namespace crowdlab::train {

// Filesystem layout of one training run under runs_root/run_id.
struct RunPaths {
  std::string run_dir;
  std::string config_path;    // normalized config echo, written before training
  std::string records_path;   // records.jsonl: one JSON object per epoch
  std::string ckpt_dir;
  std::string eval_dir;
  std::string translate_dir;  // translated image dumps (adaptation runs)
};

// Creates the run directory tree and writes the config echo. Rerunning from
// that echo with the same data reproduces the run bit for bit.
RunPaths prepare_run_dir(const std::string& runs_root, const std::string& run_id,
                         const cfg::Config& c);

void append_record(const std::string& records_path, const nlohmann::json& record);

struct FitResult {
  nn::ModelState model;  // weights after the last epoch
  double best_val_mae = 0;
  int best_epoch = -1;
  std::string best_ckpt, last_ckpt;
  std::vector<double> train_losses;  // per-epoch mean per-image loss
  std::vector<double> val_maes;
};

// Supervised counter training: per-image updates over a shuffled epoch of at
// most `batch` images, learning rate lr * dr^epoch, optional square crops
// (multiples of 8), optional segmentation multi-task term. Validation MAE is
// measured every epoch; best and last checkpoints land in ckpt/. A non-finite
// loss is recorded to records.jsonl and raised as Error. When `init` is given
// its weights are copied into the fresh model (architectures must match).
FitResult train_supervised(const std::string& root, const data::Manifest& m,
                           const labels::Split& split, const cfg::Config& c,
                           const std::string& runs_root, const std::string& run_id,
                           const nn::ModelState* init = nullptr);

struct PretrainFinetuneResult {
  FitResult pretrain;
  FitResult finetune;
};

// Two-stage scheme: pretrain_epochs on the source dataset, then the best
// pretrain checkpoint is reloaded from disk and fine-tuned for `epochs` on
// the target dataset. Runs land under run_id/pretrain and run_id/finetune.
PretrainFinetuneResult pretrain_then_finetune(
    const std::string& source_root, const data::Manifest& source_m,
    const labels::Split& source_split, const std::string& target_root,
    const data::Manifest& target_m, const labels::Split& target_split,
    const cfg::Config& c, const std::string& runs_root, const std::string& run_id);

struct DaResult {
  nn::ModelState sfcn, gen_sr, gen_rs;  // weights after the last epoch
  double best_val_mae = 0;
  int best_epoch = -1;
  std::string best_ckpt;     // counter checkpoint at the best epoch
  double recon_ssim = 0;     // mean cycle-reconstruction similarity, last epoch
  std::vector<double> train_losses;  // per-epoch mean joint loss
  std::vector<double> val_maes;
  int n_filtered_out = 0;    // source records removed by the admission rule
};

// Joint domain adaptation: a source->target/target->source translator pair
// with least-squares discriminators and cycle reconstruction (structural
// similarity term optional), the counter supervised on translated source
// crops, and a domain classifier on translator bottleneck features that the
// target path learns to fool. Source records can be pre-filtered by the
// admission rule named in the config (rejections logged to filter_log.json).
// Target labels are never read; validation is counting MAE over translated
// source validation images. `real_ids` empty means every target record.
DaResult train_da_joint(const std::string& synth_root, const data::Manifest& synth_m,
                        const labels::Split& synth_split, const std::string& real_root,
                        const data::Manifest& real_m, const std::vector<int>& real_ids,
                        const cfg::Config& c, const std::string& runs_root,
                        const std::string& run_id);

}  // namespace crowdlab::train
