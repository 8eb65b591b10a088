#include "crowdlab/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <iterator>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "crowdlab/checkpoint.hpp"
#include "crowdlab/common.hpp"
#include "crowdlab/config.hpp"
#include "crowdlab/dataset.hpp"
#include "crowdlab/labels.hpp"
#include "crowdlab/metrics.hpp"
#include "crowdlab/nets.hpp"
#include "crowdlab/png_io.hpp"
#include "crowdlab/regularizers.hpp"
#include "crowdlab/trainers.hpp"

namespace crowdlab::cli {
namespace {

namespace fs = std::filesystem;

// Relative paths resolve against CROWDLAB_ROOT when the variable is set, so
// one config can drive runs out of different sandboxes.
std::string resolve(const std::string& p) {
  if (p.empty()) return p;
  fs::path path(p);
  if (path.is_absolute()) return p;
  const char* root = std::getenv("CROWDLAB_ROOT");
  if (root != nullptr && *root != '\0') return (fs::path(root) / path).string();
  return p;
}

cfg::Config load_run_config(const std::string& config_path, const std::vector<std::string>& sets) {
  cfg::Config c;
  if (!config_path.empty()) c = cfg::load_config_file(resolve(config_path));
  return cfg::apply_overrides(c, sets);
}

scene::RenderStyle parse_style(const std::string& name) {
  if (name == "studio") return scene::RenderStyle::kStudio;
  if (name == "field") return scene::RenderStyle::kField;
  throw ArgumentError("unknown style '" + name + "' (expected studio|field)");
}

data::Manifest manifest_for(const std::string& root, const std::string& manifest_path) {
  if (manifest_path.empty()) return data::read_manifest(root);
  return data::read_manifest_file(resolve(manifest_path));
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << j.dump(2) << "\n";
}

std::string fmt_num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::string fmt_tick(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Plot rendering: enough of a raster toolkit for axis-labeled line charts.

constexpr int kGlyphW = 4;
constexpr int kGlyphH = 6;

struct Glyph {
  char ch;
  std::uint8_t rows[kGlyphH];  // low 4 bits per row, MSB is the left pixel
};

constexpr Glyph kFont[] = {
    {'0', {0x6, 0x9, 0x9, 0x9, 0x9, 0x6}}, {'1', {0x2, 0x6, 0x2, 0x2, 0x2, 0x7}},
    {'2', {0x6, 0x9, 0x1, 0x2, 0x4, 0xF}}, {'3', {0xE, 0x1, 0x6, 0x1, 0x1, 0xE}},
    {'4', {0x2, 0x6, 0xA, 0xF, 0x2, 0x2}}, {'5', {0xF, 0x8, 0xE, 0x1, 0x1, 0xE}},
    {'6', {0x6, 0x8, 0xE, 0x9, 0x9, 0x6}}, {'7', {0xF, 0x1, 0x2, 0x2, 0x4, 0x4}},
    {'8', {0x6, 0x9, 0x6, 0x9, 0x9, 0x6}}, {'9', {0x6, 0x9, 0x9, 0x7, 0x1, 0x6}},
    {'.', {0x0, 0x0, 0x0, 0x0, 0x6, 0x6}}, {'-', {0x0, 0x0, 0xF, 0x0, 0x0, 0x0}},
    {'+', {0x0, 0x2, 0x7, 0x2, 0x0, 0x0}}, {'e', {0x0, 0x6, 0x9, 0xF, 0x8, 0x7}},
    {'i', {0x2, 0x0, 0x2, 0x2, 0x2, 0x2}}, {'n', {0x0, 0x0, 0xE, 0x9, 0x9, 0x9}},
    {'f', {0x3, 0x4, 0xE, 0x4, 0x4, 0x4}}, {'a', {0x0, 0x0, 0x7, 0x9, 0x9, 0x7}},
};

struct Rgb {
  double r, g, b;
};

void set_px(Tensor& img, int y, int x, Rgb c) {
  if (y < 0 || y >= img.dim(1) || x < 0 || x >= img.dim(2)) return;
  img.at(0, y, x) = c.r;
  img.at(1, y, x) = c.g;
  img.at(2, y, x) = c.b;
}

void draw_glyph(Tensor& img, int y0, int x0, char ch, Rgb c) {
  for (const Glyph& g : kFont) {
    if (g.ch != ch) continue;
    for (int r = 0; r < kGlyphH; ++r)
      for (int b = 0; b < kGlyphW; ++b)
        if ((g.rows[r] >> (kGlyphW - 1 - b)) & 1) set_px(img, y0 + r, x0 + b, c);
    return;
  }
}

void draw_text(Tensor& img, int y0, int x0, const std::string& s, Rgb c) {
  int x = x0;
  for (char ch : s) {
    draw_glyph(img, y0, x, ch, c);
    x += kGlyphW + 1;
  }
}

int text_width(const std::string& s) {
  return s.empty() ? 0 : static_cast<int>(s.size()) * (kGlyphW + 1) - 1;
}

void draw_segment(Tensor& img, double y0, double x0, double y1, double x1, Rgb c) {
  const int steps = static_cast<int>(std::max(std::fabs(y1 - y0), std::fabs(x1 - x0))) + 1;
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    set_px(img, static_cast<int>(std::lround(y0 + t * (y1 - y0))),
           static_cast<int>(std::lround(x0 + t * (x1 - x0))), c);
  }
}

// One series against its epoch index, white background, min/max tick labels.
Tensor line_plot(const std::vector<double>& ys, int height = 320, int width = 480) {
  Tensor img({3, height, width}, 1.0);
  const int left = 52, right = 12, top = 12, bottom = 22;
  const int py0 = top, py1 = height - bottom - 1;
  const int px0 = left, px1 = width - right - 1;
  const Rgb axis{0.25, 0.25, 0.25}, grid{0.88, 0.88, 0.9}, line{0.15, 0.35, 0.8}, text{0.1, 0.1, 0.1};

  double lo = 0, hi = 0;
  bool any = false;
  for (double v : ys) {
    if (!std::isfinite(v)) continue;
    lo = any ? std::min(lo, v) : v;
    hi = any ? std::max(hi, v) : v;
    any = true;
  }
  if (!any) {
    lo = 0;
    hi = 1;
  }
  double span = hi - lo;
  if (span <= 0) span = std::max(1e-12, std::fabs(hi)) * 0.1 + 1e-12;
  const double ymin = lo - 0.05 * span, ymax = hi + 0.05 * span;

  for (int k = 1; k < 4; ++k) {
    const int gy = py0 + k * (py1 - py0) / 4;
    draw_segment(img, gy, px0, gy, px1, grid);
  }
  draw_segment(img, py0, px0 - 1, py1 + 1, px0 - 1, axis);
  draw_segment(img, py1 + 1, px0 - 1, py1 + 1, px1, axis);

  const auto to_y = [&](double v) {
    return py1 - (v - ymin) / (ymax - ymin) * (py1 - py0);
  };
  const auto to_x = [&](std::size_t i) {
    if (ys.size() <= 1) return 0.5 * (px0 + px1);
    return px0 + static_cast<double>(i) / (ys.size() - 1) * (px1 - px0);
  };
  for (std::size_t i = 0; i + 1 < ys.size(); ++i) {
    if (!std::isfinite(ys[i]) || !std::isfinite(ys[i + 1])) continue;
    draw_segment(img, to_y(ys[i]), to_x(i), to_y(ys[i + 1]), to_x(i + 1), line);
  }
  for (std::size_t i = 0; i < ys.size(); ++i) {
    if (!std::isfinite(ys[i])) continue;
    const int cy = static_cast<int>(std::lround(to_y(ys[i])));
    const int cx = static_cast<int>(std::lround(to_x(i)));
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) set_px(img, cy + dy, cx + dx, line);
  }

  draw_text(img, py0 - 3, 2, fmt_tick(any ? hi : 0), text);
  draw_text(img, py1 - kGlyphH + 4, 2, fmt_tick(any ? lo : 0), text);
  draw_text(img, py1 + 5, px0, "0", text);
  const std::string xmax = std::to_string(ys.empty() ? 0 : ys.size() - 1);
  draw_text(img, py1 + 5, px1 - text_width(xmax), xmax, text);
  return img;
}

// ---------------------------------------------------------------------------
// Verb handlers.

struct GenArgs {
  std::string out, style = "studio";
  int locations = 0;
  int images_per_scene = 1;
  std::uint64_t seed = 1;
};

int cmd_gen(const GenArgs& a, std::ostream& out) {
  const std::string root = resolve(a.out);
  const data::Manifest m =
      data::generate_dataset(root, a.locations, a.seed, parse_style(a.style), a.images_per_scene);
  nlohmann::json echo{{"locations", a.locations},
                      {"seed", a.seed},
                      {"style", a.style},
                      {"images_per_scene", a.images_per_scene}};
  write_json_file((fs::path(root) / "gen_config.json").string(), echo);
  out << "generated " << m.records.size() << " records under " << root << "\n";
  return 0;
}

struct SplitArgs {
  std::string root, manifest, strategy = "random", out;
  std::uint64_t seed = 1;
};

int cmd_split(const SplitArgs& a, std::ostream& out) {
  const std::string root = resolve(a.root);
  const data::Manifest m = manifest_for(root, a.manifest);
  const labels::SplitStrategy strat = labels::parse_strategy(a.strategy);
  const labels::Split s = labels::split_manifest(m, strat, a.seed);
  const std::string path =
      a.out.empty() ? (fs::path(root) / "split.json").string() : resolve(a.out);
  labels::write_split(path, s);
  out << "split " << labels::strategy_name(strat) << " seed " << a.seed << ": train "
      << s.train_ids.size() << " val " << s.val_ids.size() << " test " << s.test_ids.size()
      << " -> " << path << "\n";
  return 0;
}

struct FilterArgs {
  std::string root, manifest, rule, out_manifest, log;
};

int cmd_filter(const FilterArgs& a, std::ostream& out) {
  const std::string root = resolve(a.root);
  const data::Manifest m = manifest_for(root, a.manifest);
  const reg::FilterRule rule = reg::load_filter_rule(resolve(a.rule));
  const reg::FilterResult fr = reg::filter_manifest(rule, m);
  data::Manifest kept;
  for (int id : fr.kept) kept.records.push_back(m.records[static_cast<std::size_t>(id)]);
  const std::string mpath = a.out_manifest.empty()
                                ? (fs::path(root) / ("manifest_" + rule.name + ".json")).string()
                                : resolve(a.out_manifest);
  const std::string lpath = a.log.empty()
                                ? (fs::path(root) / ("filter_log_" + rule.name + ".json")).string()
                                : resolve(a.log);
  data::write_manifest_file(mpath, kept);
  reg::write_filter_log(lpath, rule, fr);
  out << "rule " << rule.name << ": kept " << fr.kept.size() << " of " << m.records.size()
      << " (" << fr.rejected.size() << " rejected)\n"
      << "manifest -> " << mpath << "\nlog -> " << lpath << "\n";
  return 0;
}

struct TrainArgs {
  std::string root, manifest, split, runs = "runs", id, config;
  std::string pretrain_root, pretrain_manifest, pretrain_split;
  std::vector<std::string> sets;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const cfg::Config c = load_run_config(a.config, a.sets);
  const std::string root = resolve(a.root);
  const data::Manifest m = manifest_for(root, a.manifest);
  const labels::Split split = labels::read_split(resolve(a.split));
  const std::string runs = resolve(a.runs);
  if (!a.pretrain_root.empty() || !a.pretrain_split.empty()) {
    if (a.pretrain_root.empty() || a.pretrain_split.empty())
      throw ArgumentError("--pretrain-root and --pretrain-split must be given together");
    const std::string proot = resolve(a.pretrain_root);
    const data::Manifest pm = manifest_for(proot, a.pretrain_manifest);
    const labels::Split psplit = labels::read_split(resolve(a.pretrain_split));
    const train::PretrainFinetuneResult r =
        train::pretrain_then_finetune(proot, pm, psplit, root, m, split, c, runs, a.id);
    out << "pretrain best val mae " << fmt_num(r.pretrain.best_val_mae) << " at epoch "
        << r.pretrain.best_epoch << "\n"
        << "finetune best val mae " << fmt_num(r.finetune.best_val_mae) << " at epoch "
        << r.finetune.best_epoch << "\n"
        << "checkpoint " << r.finetune.best_ckpt << "\n";
  } else {
    const train::FitResult r = train::train_supervised(root, m, split, c, runs, a.id);
    out << "best val mae " << fmt_num(r.best_val_mae) << " at epoch " << r.best_epoch << "\n"
        << "checkpoint " << r.best_ckpt << "\n";
  }
  return 0;
}

struct AdaptArgs {
  std::string source_root, source_manifest, source_split;
  std::string target_root, target_manifest;
  std::string runs = "runs", id, config;
  std::vector<std::string> sets;
};

int cmd_adapt(const AdaptArgs& a, std::ostream& out) {
  const cfg::Config c = load_run_config(a.config, a.sets);
  const std::string sroot = resolve(a.source_root);
  const std::string troot = resolve(a.target_root);
  const data::Manifest sm = manifest_for(sroot, a.source_manifest);
  const data::Manifest tm = manifest_for(troot, a.target_manifest);
  const labels::Split ss = labels::read_split(resolve(a.source_split));
  const train::DaResult r =
      train::train_da_joint(sroot, sm, ss, troot, tm, {}, c, resolve(a.runs), a.id);
  out << "best translated-val mae " << fmt_num(r.best_val_mae) << " at epoch " << r.best_epoch
      << "\n"
      << "reconstruction ssim " << fmt_num(r.recon_ssim) << "\n";
  if (r.n_filtered_out > 0)
    out << "admission rule removed " << r.n_filtered_out << " source records\n";
  out << "checkpoint " << r.best_ckpt << "\n";
  return 0;
}

struct EvalArgs {
  std::string root, manifest, split, subset = "test", ckpt, gen_ckpt, out_dir, config;
  std::vector<std::string> sets;
};

void print_report(const metric::EvalReport& rep, std::ostream& out) {
  const auto row = [&](const char* name, double v) {
    out << "  " << std::left << std::setw(9) << name << fmt_num(v) << "\n";
  };
  out << "  " << std::left << std::setw(9) << "samples" << rep.n_samples << "\n";
  row("mae", rep.mae);
  row("mse", rep.mse);
  row("psnr", rep.psnr);
  row("ssim", rep.ssim);
  if (rep.has_seg) {
    row("iou_bg", rep.iou_bg);
    row("iou_fg", rep.iou_fg);
    row("miou", rep.miou);
  }
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const cfg::Config c = load_run_config(a.config, a.sets);
  const std::string root = resolve(a.root);
  const data::Manifest m = manifest_for(root, a.manifest);

  std::vector<int> ids;
  if (a.split.empty()) {
    for (std::size_t i = 0; i < m.records.size(); ++i) ids.push_back(static_cast<int>(i));
  } else {
    const labels::Split s = labels::read_split(resolve(a.split));
    if (a.subset == "train")
      ids = s.train_ids;
    else if (a.subset == "val")
      ids = s.val_ids;
    else if (a.subset == "test")
      ids = s.test_ids;
    else
      throw ArgumentError("unknown subset '" + a.subset + "' (expected train|val|test)");
  }

  nn::Checkpoint ck = nn::load_checkpoint(resolve(a.ckpt));
  metric::EvalOptions opt;
  opt.lnf = c.lnf;
  opt.sigma = c.sigma;
  if (c.density_clip > 0) opt.density_clip = c.density_clip;
  opt.out_dir = resolve(a.out_dir);
  fs::create_directories(opt.out_dir);

  metric::EvalReport rep;
  if (a.gen_ckpt.empty()) {
    opt.with_seg = ck.model.hparams.count("with_seg") != 0 && ck.model.hparam("with_seg") != 0;
    rep = metric::evaluate_model(ck.model, root, m, ids, opt);
  } else {
    nn::Checkpoint gk = nn::load_checkpoint(resolve(a.gen_ckpt));
    const auto predict = [&](const data::ManifestRecord&, const Tensor& img) {
      const nn::Var x = nn::Var::constant(img);
      const nn::Var fake = nn::generator_forward(nn::to_signed(x), gk.model);
      const nn::SfcnOut so = nn::sfcn_forward(nn::to_unit(fake), ck.model, false);
      return metric::PredictOut{so.density.value(), std::nullopt};
    };
    rep = metric::evaluate_with(predict, root, m, ids, opt);
  }
  cfg::write_config_file((fs::path(opt.out_dir) / "config.json").string(), c);

  out << "evaluation over " << ids.size() << " samples:\n";
  print_report(rep, out);
  out << "report -> " << (fs::path(opt.out_dir) / "eval_report.json").string() << "\n";
  return 0;
}

struct ReportArgs {
  std::string run, out_dir;
};

int cmd_report(const ReportArgs& a, std::ostream& out) {
  const std::string run_dir = resolve(a.run);
  const std::string rec_path = (fs::path(run_dir) / "records.jsonl").string();
  std::ifstream rf(rec_path);
  if (!rf) throw IoError("cannot read " + rec_path);
  std::vector<nlohmann::json> epochs;
  std::vector<std::string> events;
  std::string line;
  while (std::getline(rf, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IoError("bad record line in " + rec_path + ": " + e.what());
    }
    if (j.contains("event"))
      events.push_back(j.dump());
    else
      epochs.push_back(std::move(j));
  }

  const std::string out_dir =
      a.out_dir.empty() ? (fs::path(run_dir) / "report").string() : resolve(a.out_dir);
  fs::create_directories(out_dir);

  std::string config_dump;
  {
    std::ifstream cf(fs::path(run_dir) / "config.json");
    if (cf) {
      std::string text((std::istreambuf_iterator<char>(cf)), std::istreambuf_iterator<char>());
      config_dump = text;
      std::ofstream copy(fs::path(out_dir) / "config.json");
      copy << text;
    }
  }

  // Column order: epoch first, then the remaining numeric keys alphabetically.
  std::set<std::string> keyset;
  for (const nlohmann::json& j : epochs)
    for (auto it = j.begin(); it != j.end(); ++it)
      if (it.value().is_number()) keyset.insert(it.key());
  std::vector<std::string> cols;
  if (keyset.count("epoch")) cols.push_back("epoch");
  for (const std::string& k : keyset)
    if (k != "epoch") cols.push_back(k);

  const char* kPlotKeys[] = {"train_loss", "joint_loss", "val_mae", "recon_ssim", "disc_loss"};
  std::vector<std::string> plotted;
  for (const char* key : kPlotKeys) {
    std::vector<double> ys;
    bool present = false;
    for (const nlohmann::json& j : epochs) {
      if (j.contains(key) && j.at(key).is_number()) {
        ys.push_back(j.at(key).get<double>());
        present = true;
      } else {
        ys.push_back(std::numeric_limits<double>::quiet_NaN());
      }
    }
    if (!present) continue;
    io::write_rgb8((fs::path(out_dir) / (std::string(key) + ".png")).string(), line_plot(ys));
    plotted.push_back(key);
  }

  nlohmann::json eval_rep;
  {
    std::ifstream ef(fs::path(run_dir) / "eval" / "eval_report.json");
    if (ef) ef >> eval_rep;
  }

  std::ofstream md(fs::path(out_dir) / "report.md");
  if (!md) throw IoError("cannot write report.md under " + out_dir);
  md << "# Training run report\n\nRun directory: `" << run_dir << "`\n\n";
  if (!config_dump.empty()) md << "## Configuration\n\n```json\n" << config_dump << "```\n\n";
  md << "## Epoch records\n\n";
  if (epochs.empty()) {
    md << "No epoch records.\n\n";
  } else {
    md << "|";
    for (const std::string& k : cols) md << " " << k << " |";
    md << "\n|";
    for (std::size_t i = 0; i < cols.size(); ++i) md << " --- |";
    md << "\n";
    for (const nlohmann::json& j : epochs) {
      md << "|";
      for (const std::string& k : cols) {
        md << " ";
        if (j.contains(k) && j.at(k).is_number()) md << fmt_num(j.at(k).get<double>());
        md << " |";
      }
      md << "\n";
    }
    md << "\n";
  }
  if (!events.empty()) {
    md << "## Events\n\n";
    for (const std::string& e : events) md << "- `" << e << "`\n";
    md << "\n";
  }
  if (eval_rep.is_object()) {
    md << "## Final validation metrics\n\n| metric | value |\n| --- | --- |\n";
    for (auto it = eval_rep.begin(); it != eval_rep.end(); ++it) {
      md << "| " << it.key() << " | ";
      if (it.value().is_number())
        md << fmt_num(it.value().get<double>());
      else
        md << it.value().dump();
      md << " |\n";
    }
    md << "\n";
  }
  if (!plotted.empty()) {
    md << "## Curves\n\n";
    for (const std::string& k : plotted) md << "![" << k << "](" << k << ".png)\n";
  }
  md.close();

  out << "report -> " << (fs::path(out_dir) / "report.md").string() << " (" << plotted.size()
      << " plots)\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  static const std::set<std::string> kVerbs = {"gen",   "split", "filter", "train",
                                              "adapt", "eval",  "report"};
  if (!args.empty() && !args[0].empty() && args[0][0] != '-' && kVerbs.count(args[0]) == 0) {
    err << "error: unknown command '" << args[0] << "'\n";
    return 1;
  }

  CLI::App app{"desk-scale crowd counting laboratory"};
  app.name("crowdlab");
  app.require_subcommand(1);

  GenArgs ga;
  CLI::App* gen = app.add_subcommand("gen", "render a synthetic dataset with automatic labels");
  gen->add_option("--out", ga.out, "dataset root to create")->required();
  gen->add_option("--locations", ga.locations, "number of locations (4 cameras each)")->required();
  gen->add_option("--seed", ga.seed, "master seed");
  gen->add_option("--style", ga.style, "photometric style: studio|field");
  gen->add_option("--images-per-scene", ga.images_per_scene, "captures per camera");

  SplitArgs sa;
  CLI::App* split = app.add_subcommand("split", "partition a manifest into train/val/test");
  split->add_option("--root", sa.root, "dataset root")->required();
  split->add_option("--manifest", sa.manifest, "manifest path (default <root>/manifest.json)");
  split->add_option("--strategy", sa.strategy, "random|cross_camera|cross_location");
  split->add_option("--seed", sa.seed, "split seed");
  split->add_option("--out", sa.out, "split file (default <root>/split.json)");

  FilterArgs fa;
  CLI::App* filter = app.add_subcommand("filter", "apply a scene admission rule to a manifest");
  filter->add_option("--root", fa.root, "dataset root")->required();
  filter->add_option("--manifest", fa.manifest, "manifest path (default <root>/manifest.json)");
  filter->add_option("--rule", fa.rule, "admission rule JSON file")->required();
  filter->add_option("--out-manifest", fa.out_manifest, "filtered manifest path");
  filter->add_option("--log", fa.log, "rejection log path");

  TrainArgs ta;
  CLI::App* train = app.add_subcommand("train", "supervised training (optionally pretrain first)");
  train->add_option("--root", ta.root, "dataset root")->required();
  train->add_option("--manifest", ta.manifest, "manifest path (default <root>/manifest.json)");
  train->add_option("--split", ta.split, "split file")->required();
  train->add_option("--runs", ta.runs, "runs root (default runs)");
  train->add_option("--id", ta.id, "run id")->required();
  train->add_option("--config", ta.config, "config JSON file");
  train->add_option("--set", ta.sets, "override, e.g. train.lr=1e-4");
  train->add_option("--pretrain-root", ta.pretrain_root, "pretraining dataset root");
  train->add_option("--pretrain-manifest", ta.pretrain_manifest, "pretraining manifest path");
  train->add_option("--pretrain-split", ta.pretrain_split, "pretraining split file");

  AdaptArgs aa;
  CLI::App* adapt = app.add_subcommand("adapt", "joint translation + counting domain adaptation");
  adapt->add_option("--source-root", aa.source_root, "labeled source dataset root")->required();
  adapt->add_option("--source-manifest", aa.source_manifest, "source manifest path");
  adapt->add_option("--source-split", aa.source_split, "source split file")->required();
  adapt->add_option("--target-root", aa.target_root, "unlabeled target dataset root")->required();
  adapt->add_option("--target-manifest", aa.target_manifest, "target manifest path");
  adapt->add_option("--runs", aa.runs, "runs root (default runs)");
  adapt->add_option("--id", aa.id, "run id")->required();
  adapt->add_option("--config", aa.config, "config JSON file");
  adapt->add_option("--set", aa.sets, "override, e.g. loss.beta=0.2");

  EvalArgs ea;
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset subset");
  eval->add_option("--root", ea.root, "dataset root")->required();
  eval->add_option("--manifest", ea.manifest, "manifest path (default <root>/manifest.json)");
  eval->add_option("--split", ea.split, "split file (omit to use every record)");
  eval->add_option("--subset", ea.subset, "train|val|test (default test)");
  eval->add_option("--ckpt", ea.ckpt, "counter checkpoint")->required();
  eval->add_option("--gen-ckpt", ea.gen_ckpt, "translate through this generator first");
  eval->add_option("--out", ea.out_dir, "output directory for report + per-sample CSV")->required();
  eval->add_option("--config", ea.config, "config JSON file");
  eval->add_option("--set", ea.sets, "override, e.g. data.lnf=100");

  ReportArgs ra;
  CLI::App* report = app.add_subcommand("report", "render run records into markdown + plots");
  report->add_option("--run", ra.run, "run directory")->required();
  report->add_option("--out", ra.out_dir, "output directory (default <run>/report)");

  try {
    std::vector<std::string> argv(args);
    std::reverse(argv.begin(), argv.end());  // CLI11's vector parse consumes back-to-front
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (gen->parsed()) return cmd_gen(ga, out);
    if (split->parsed()) return cmd_split(sa, out);
    if (filter->parsed()) return cmd_filter(fa, out);
    if (train->parsed()) return cmd_train(ta, out);
    if (adapt->parsed()) return cmd_adapt(aa, out);
    if (eval->parsed()) return cmd_eval(ea, out);
    if (report->parsed()) return cmd_report(ra, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  err << "error: no command\n";
  return 1;
}

}  // namespace crowdlab::cli
