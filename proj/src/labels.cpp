#include "crowdlab/labels.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "crowdlab/rng.hpp"
#include "json.hpp"

namespace crowdlab::labels {

DensityMap density_from_dots(const std::vector<std::array<double, 2>>& dots,
                             int height, int width, double sigma, double lnf) {
  if (height < 1 || width < 1)
    throw ArgumentError(cat("density map shape must be positive, got ", height,
                            "x", width));
  if (sigma <= 0.0) throw ArgumentError(cat("sigma must be > 0, got ", sigma));
  if (lnf <= 0.0) throw ArgumentError(cat("lnf must be > 0, got ", lnf));

  DensityMap dm;
  dm.values = Tensor({height, width});
  dm.lnf = lnf;
  dm.sigma = sigma;
  const int R = static_cast<int>(std::ceil(4.0 * sigma));
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  for (std::size_t i = 0; i < dots.size(); ++i) {
    const double x = dots[i][0], y = dots[i][1];
    if (!(x >= 0.0 && x < width && y >= 0.0 && y < height))
      throw ArgumentError(cat("dot ", i, " at (", x, ",", y,
                              ") lies outside the ", height, "x", width,
                              " image"));
    const int y0 = std::max(0, static_cast<int>(std::floor(y)) - R);
    const int y1 = std::min(height - 1, static_cast<int>(std::floor(y)) + R);
    const int x0 = std::max(0, static_cast<int>(std::floor(x)) - R);
    const int x1 = std::min(width - 1, static_cast<int>(std::floor(x)) + R);
    double z = 0.0;
    for (int py = y0; py <= y1; ++py)
      for (int px = x0; px <= x1; ++px) {
        const double dx = px - x, dy = py - y;
        z += std::exp(-(dx * dx + dy * dy) * inv2s2);
      }
    const double scale = lnf / z;  // exact per-dot mass despite truncation
    for (int py = y0; py <= y1; ++py)
      for (int px = x0; px <= x1; ++px) {
        const double dx = px - x, dy = py - y;
        dm.values.at(py, px) += scale * std::exp(-(dx * dx + dy * dy) * inv2s2);
      }
  }
  return dm;
}

SplitStrategy parse_strategy(const std::string& name) {
  if (name == "random") return SplitStrategy::kRandom;
  if (name == "cross_camera") return SplitStrategy::kCrossCamera;
  if (name == "cross_location") return SplitStrategy::kCrossLocation;
  throw ArgumentError(cat("unknown split strategy '", name,
                          "' (random|cross_camera|cross_location)"));
}

std::string strategy_name(SplitStrategy s) {
  switch (s) {
    case SplitStrategy::kRandom: return "random";
    case SplitStrategy::kCrossCamera: return "cross_camera";
    default: return "cross_location";
  }
}

namespace {
int rounded(double v) { return static_cast<int>(std::floor(v + 0.5)); }
}  // namespace

Split split_manifest(const data::Manifest& manifest, SplitStrategy strategy,
                     std::uint64_t seed) {
  const int n = static_cast<int>(manifest.records.size());
  if (n == 0) throw ArgumentError("split_manifest: manifest is empty");

  Split out;
  out.strategy = strategy;
  out.seed = seed;
  std::vector<int> train, test;

  if (strategy == SplitStrategy::kRandom) {
    std::vector<int> ids(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = i;
    Rng rng = Rng::derive(seed, "split-random");
    rng.shuffle(ids);
    const int n_test = rounded(0.25 * n);
    test.assign(ids.begin(), ids.begin() + n_test);
    train.assign(ids.begin() + n_test, ids.end());
  } else if (strategy == SplitStrategy::kCrossCamera) {
    std::map<int, std::set<int>> cams_by_loc;
    for (const auto& r : manifest.records)
      cams_by_loc[r.location_id].insert(r.camera_id);
    for (const auto& [loc, cams] : cams_by_loc)
      if (cams.size() < 2)
        throw ArgumentError(cat("cross_camera split needs >=2 cameras per "
                                "location; location ", loc, " has ",
                                cams.size()));
    std::map<int, int> held_out;
    for (const auto& [loc, cams] : cams_by_loc) {
      std::vector<int> cs(cams.begin(), cams.end());
      Rng rng = Rng::derive(seed, "split-camera", static_cast<std::uint64_t>(loc));
      held_out[loc] = cs[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(cs.size()) - 1))];
    }
    for (int i = 0; i < n; ++i) {
      const auto& r = manifest.records[static_cast<std::size_t>(i)];
      (r.camera_id == held_out[r.location_id] ? test : train).push_back(i);
    }
  } else {
    std::set<int> locs;
    for (const auto& r : manifest.records) locs.insert(r.location_id);
    std::vector<int> ls(locs.begin(), locs.end());
    Rng rng = Rng::derive(seed, "split-location");
    rng.shuffle(ls);
    const int n_test_loc = rounded(0.25 * static_cast<double>(ls.size()));
    std::set<int> test_locs(ls.begin(), ls.begin() + n_test_loc);
    for (int i = 0; i < n; ++i) {
      const auto& r = manifest.records[static_cast<std::size_t>(i)];
      (test_locs.count(r.location_id) ? test : train).push_back(i);
    }
  }

  // 10% of the training side becomes validation.
  Rng vrng = Rng::derive(seed, "split-val");
  std::vector<int> shuffled = train;
  vrng.shuffle(shuffled);
  const int n_val = rounded(0.10 * static_cast<double>(shuffled.size()));
  out.val_ids.assign(shuffled.begin(), shuffled.begin() + n_val);
  out.train_ids.assign(shuffled.begin() + n_val, shuffled.end());
  out.test_ids = std::move(test);
  std::sort(out.train_ids.begin(), out.train_ids.end());
  std::sort(out.val_ids.begin(), out.val_ids.end());
  std::sort(out.test_ids.begin(), out.test_ids.end());
  return out;
}

void write_split(const std::string& path, const Split& s) {
  nlohmann::json j;
  j["strategy"] = strategy_name(s.strategy);
  j["seed"] = s.seed;
  j["train_ids"] = s.train_ids;
  j["val_ids"] = s.val_ids;
  j["test_ids"] = s.test_ids;
  std::ofstream f(path);
  if (!f) throw IoError(cat("cannot write split file ", path));
  f << j.dump(2) << "\n";
}

Split read_split(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError(cat("cannot read split file ", path));
  nlohmann::json j;
  f >> j;
  Split s;
  s.strategy = parse_strategy(j.at("strategy").get<std::string>());
  s.seed = j.at("seed").get<std::uint64_t>();
  s.train_ids = j.at("train_ids").get<std::vector<int>>();
  s.val_ids = j.at("val_ids").get<std::vector<int>>();
  s.test_ids = j.at("test_ids").get<std::vector<int>>();
  return s;
}

Tensor mask_from_render(const std::vector<scene::PersonMask>& person_masks,
                        int height, int width) {
  for (std::size_t i = 0; i < person_masks.size(); ++i)
    if (person_masks[i].img_h != height || person_masks[i].img_w != width)
      throw ArgumentError(cat("mask ", i, " is ", person_masks[i].img_h, "x",
                              person_masks[i].img_w, ", expected ", height, "x",
                              width));
  Tensor out({height, width});
  for (const auto& m : person_masks)
    for (int y = m.y0; y < m.y0 + m.h; ++y)
      for (int x = m.x0; x < m.x0 + m.w; ++x)
        if (m.test(y, x)) out.at(y, x) = 1.0;
  return out;
}

}  // namespace crowdlab::labels
