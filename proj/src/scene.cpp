#include "crowdlab/scene.hpp"

#include <algorithm>
#include <cmath>

#include "crowdlab/rng.hpp"

namespace crowdlab::scene {

namespace {
constexpr int kCellPx = 8;       // capacity guard: one head per cell
constexpr int kBandCap = 256;    // max persons per depth band
constexpr double kTau = 6.283185307179586476925286766559;
}  // namespace

int level_capacity(int level) {
  static const int caps[9] = {10, 25, 50, 100, 300, 600, 1000, 2000, 4000};
  if (level < 0 || level > 8)
    throw ArgumentError(cat("level must be 0..8, got ", level));
  return caps[level];
}

std::array<int, 2> size_for_level(int level) {
  // Heights/widths chosen so the densest level still offers ~1.3x headroom
  // over capacity at one head per 8x8 cell inside a typical roi.
  static const std::array<int, 2> sizes[9] = {
      {96, 128},  {96, 128},  {96, 128},  {112, 144}, {192, 248},
      {272, 352}, {352, 448}, {496, 640}, {704, 896}};
  level_capacity(level);  // range check
  return sizes[level];
}

double polygon_area(const std::vector<std::array<double, 2>>& poly) {
  double s = 0.0;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = poly[i];
    const auto& b = poly[(i + 1) % n];
    s += a[0] * b[1] - b[0] * a[1];
  }
  return std::fabs(s) * 0.5;
}

bool point_in_polygon(const std::vector<std::array<double, 2>>& poly, double x,
                      double y) {
  // Even-odd crossing count against a +x ray.
  bool inside = false;
  const std::size_t n = poly.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const double xi = poly[i][0], yi = poly[i][1];
    const double xj = poly[j][0], yj = poly[j][1];
    if ((yi > y) != (yj > y) &&
        x < (xj - xi) * (y - yi) / (yj - yi) + xi)
      inside = !inside;
  }
  return inside;
}

double depth_at(const SceneSpec& spec, double y) {
  if (spec.height <= 1) return 0.0;
  const double d = y / (spec.height - 1);
  return std::clamp(d, 0.0, 1.0);
}

std::vector<SceneSpec> build_scene_bank(int n_locations, std::uint64_t seed) {
  if (n_locations < 1)
    throw ArgumentError(cat("n_locations must be >= 1, got ", n_locations));
  // Image counts per level follow a 30/40/50 staircase across the three
  // level triplets, applied here as sampling weights.
  const std::vector<double> level_w = {30, 30, 30, 40, 40, 40, 50, 50, 50};
  std::vector<SceneSpec> bank;
  bank.reserve(static_cast<std::size_t>(n_locations) * 4);
  for (int loc = 0; loc < n_locations; ++loc) {
    for (int cam = 0; cam < 4; ++cam) {
      Rng rng = Rng::derive(seed, "scene-bank", static_cast<std::uint64_t>(loc),
                            static_cast<std::uint64_t>(cam));
      SceneSpec s;
      s.location_id = loc;
      s.camera_id = cam;
      s.level = static_cast<int>(rng.categorical(level_w));
      const auto hw = size_for_level(s.level);
      s.height = hw[0];
      s.width = hw[1];
      const double W = s.width, H = s.height;
      // Irregular quad with corners jittered inward from the frame corners;
      // stays simple because each vertex keeps to its own corner region.
      s.roi = {
          {W * rng.uniform(0.02, 0.12), H * rng.uniform(0.02, 0.15)},
          {W * (1.0 - rng.uniform(0.02, 0.12)), H * rng.uniform(0.02, 0.15)},
          {W * (1.0 - rng.uniform(0.02, 0.12)), H * (1.0 - rng.uniform(0.02, 0.10))},
          {W * rng.uniform(0.02, 0.12), H * (1.0 - rng.uniform(0.02, 0.10))},
      };
      bank.push_back(std::move(s));
    }
  }
  return bank;
}

SceneAttributes sample_attributes(const SceneSpec& spec, std::uint64_t rng_seed) {
  Rng rng = Rng::derive(rng_seed, "attrs",
                        static_cast<std::uint64_t>(spec.location_id),
                        static_cast<std::uint64_t>(spec.camera_id));
  SceneAttributes a;
  a.target_count =
      static_cast<int>(rng.uniform_int(0, level_capacity(spec.level)));
  // Biased toward daytime (most surveillance footage) but covering all hours.
  if (rng.uniform() < 0.8)
    a.time_of_day = static_cast<int>(rng.uniform_int(6 * 60, 21 * 60 - 1));
  else
    a.time_of_day = static_cast<int>(rng.uniform_int(0, 1439));
  // clear, clouds, rain, foggy, thunder, overcast, extra sunny.
  a.weather = static_cast<int>(
      rng.categorical({0.30, 0.22, 0.08, 0.06, 0.05, 0.14, 0.15}));
  return a;
}

namespace {

struct SpriteDims {
  int height;      // head top to feet
  double head_r;
  int body_w;
};

SpriteDims sprite_dims(double depth) {
  SpriteDims d;
  d.height = static_cast<int>(std::lround(10.0 + 14.0 * depth));
  d.head_r = std::max(1.5, d.height * 0.16);
  d.body_w = std::max(4, static_cast<int>(std::lround(d.height * 0.45)));
  return d;
}

PersonPlacement placement_at(const SceneSpec& spec, double hx, double hy,
                             std::uint64_t appearance) {
  PersonPlacement p;
  p.head_x = hx;
  p.head_y = hy;
  const SpriteDims d = sprite_dims(depth_at(spec, hy));
  p.head_r = d.head_r;
  p.box_w = d.body_w + 2;
  p.box_h = d.height + 2;
  p.box_x0 = static_cast<int>(std::lround(hx)) - p.box_w / 2;
  p.box_y0 = static_cast<int>(std::lround(hy - d.head_r)) - 1;
  p.depth = depth_at(spec, p.box_y0 + p.box_h);
  p.appearance_seed = appearance;
  return p;
}

}  // namespace

std::vector<PersonPlacement> place_crowd(const SceneSpec& spec, int count,
                                         std::uint64_t seed) {
  if (count < 0) throw ArgumentError(cat("count must be >= 0, got ", count));
  Rng rng = Rng::derive(seed, "place",
                        static_cast<std::uint64_t>(spec.location_id),
                        static_cast<std::uint64_t>(spec.camera_id));
  // One jittered candidate head position per 8x8 cell, kept when inside roi.
  std::vector<std::array<double, 2>> candidates;
  for (int cy = 0; cy * kCellPx < spec.height; ++cy)
    for (int cx = 0; cx * kCellPx < spec.width; ++cx) {
      const double x = cx * kCellPx + 4.0 + rng.uniform(-3.0, 3.0);
      const double y = cy * kCellPx + 4.0 + rng.uniform(-3.0, 3.0);
      if (point_in_polygon(spec.roi, x, y)) candidates.push_back({x, y});
    }
  if (count > static_cast<int>(candidates.size()))
    throw CapacityError(cat("cannot place ", count, " heads: scene ",
                            spec.location_id, "/", spec.camera_id, " roi area ",
                            polygon_area(spec.roi), " px holds at most ",
                            candidates.size(), " heads"));
  rng.shuffle(candidates);
  std::vector<PersonPlacement> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i)
    out.push_back(placement_at(spec, candidates[static_cast<std::size_t>(i)][0],
                               candidates[static_cast<std::size_t>(i)][1],
                               rng.next_u64()));
  std::stable_sort(out.begin(), out.end(),
                   [](const PersonPlacement& a, const PersonPlacement& b) {
                     if (a.depth != b.depth) return a.depth < b.depth;
                     if (a.head_y != b.head_y) return a.head_y < b.head_y;
                     return a.head_x < b.head_x;
                   });
  return out;
}

std::vector<std::array<int, 2>> depth_bands(int n_placements) {
  std::vector<std::array<int, 2>> bands;
  if (n_placements <= 0) return bands;
  const int n_bands = (n_placements + kBandCap - 1) / kBandCap;
  const int base = n_placements / n_bands, rem = n_placements % n_bands;
  int at = 0;
  for (int b = 0; b < n_bands; ++b) {
    const int sz = base + (b < rem ? 1 : 0);
    bands.push_back({at, at + sz});
    at += sz;
  }
  return bands;
}

namespace {

struct StyleParams {
  double sky[3], ground[3];
  double noise;
  double inv_gamma;
  double vignette;
  double mix;  // cross-channel bleed
};

StyleParams style_params(RenderStyle s) {
  if (s == RenderStyle::kStudio)
    return {{0.55, 0.65, 0.78}, {0.45, 0.47, 0.42}, 0.015, 1.0, 0.0, 0.0};
  return {{0.80, 0.66, 0.52}, {0.38, 0.42, 0.30}, 0.035, 1.0 / 1.3, 0.25, 0.10};
}

struct WeatherTint {
  double mul[3];
  double fog;  // blend toward neutral gray
};

WeatherTint weather_tint(int code) {
  switch (code) {
    case 0: return {{1.00, 1.00, 1.00}, 0.00};  // clear
    case 1: return {{0.90, 0.90, 0.92}, 0.10};  // clouds
    case 2: return {{0.72, 0.75, 0.85}, 0.20};  // rain
    case 3: return {{0.92, 0.92, 0.92}, 0.55};  // foggy
    case 4: return {{0.55, 0.55, 0.62}, 0.15};  // thunder
    case 5: return {{0.80, 0.80, 0.82}, 0.25};  // overcast
    case 6: return {{1.15, 1.10, 1.00}, 0.00};  // extra sunny
    default:
      throw ArgumentError(cat("weather code must be 0..6, got ", code));
  }
}

double daylight_luminance(int minutes) {
  return 0.25 + 0.75 * std::sin(kTau * 0.5 * minutes / 1440.0);
}

struct SpritePainter {
  Tensor& img;       // (3,H,W)
  std::vector<int>& owner;
  int H, W;

  void paint(int y, int x, int who, const double rgb[3]) {
    if (y < 0 || y >= H || x < 0 || x >= W) return;
    owner[static_cast<std::size_t>(y) * W + x] = who;
    for (int c = 0; c < 3; ++c) img.at(c, y, x) = rgb[c];
  }

  void disc(double cx, double cy, double r, int who, const double rgb[3]) {
    for (int y = static_cast<int>(std::floor(cy - r));
         y <= static_cast<int>(std::ceil(cy + r)); ++y)
      for (int x = static_cast<int>(std::floor(cx - r));
           x <= static_cast<int>(std::ceil(cx + r)); ++x) {
        const double dx = x - cx, dy = y - cy;
        if (dx * dx + dy * dy <= r * r) paint(y, x, who, rgb);
      }
  }

  void ellipse(double cx, double cy, double a, double b, int who,
               const double rgb[3]) {
    for (int y = static_cast<int>(std::floor(cy - b));
         y <= static_cast<int>(std::ceil(cy + b)); ++y)
      for (int x = static_cast<int>(std::floor(cx - a));
           x <= static_cast<int>(std::ceil(cx + a)); ++x) {
        const double dx = (x - cx) / a, dy = (y - cy) / b;
        if (dx * dx + dy * dy <= 1.0) paint(y, x, who, rgb);
      }
  }

  void bar(int x0, int y0, int w, int h, int who, const double rgb[3]) {
    for (int y = y0; y < y0 + h; ++y)
      for (int x = x0; x < x0 + w; ++x) paint(y, x, who, rgb);
  }
};

}  // namespace

RenderResult render(const SceneSpec& spec, const SceneAttributes& attrs,
                    const std::vector<PersonPlacement>& placements,
                    RenderStyle style) {
  const int H = spec.height, W = spec.width;
  if (H < 8 || W < 8) throw ArgumentError("render: image size too small");
  const StyleParams sp = style_params(style);
  const WeatherTint wt = weather_tint(attrs.weather);

  RenderResult out;
  out.image = Tensor({3, H, W});
  Tensor& img = out.image;
  for (int y = 0; y < H; ++y) {
    const double t = static_cast<double>(y) / (H - 1);
    for (int x = 0; x < W; ++x) {
      // Faint horizontal banding keeps the background from being flat.
      const double band = 0.03 * std::sin(x * 0.21 + y * 0.06);
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = sp.sky[c] * (1.0 - t) + sp.ground[c] * t + band;
    }
  }

  std::vector<int> owner(static_cast<std::size_t>(H) * W, -1);
  SpritePainter painter{img, owner, H, W};
  for (std::size_t i = 0; i < placements.size(); ++i) {
    const PersonPlacement& p = placements[i];
    Rng arng(p.appearance_seed);
    const double skin_base = arng.uniform(0.45, 0.85);
    const double skin[3] = {skin_base, skin_base * arng.uniform(0.75, 0.9),
                            skin_base * arng.uniform(0.6, 0.8)};
    double shirt[3], pants[3];
    for (int c = 0; c < 3; ++c) shirt[c] = arng.uniform(0.1, 0.95);
    for (int c = 0; c < 3; ++c) pants[c] = arng.uniform(0.05, 0.6);
    const int who = static_cast<int>(i);

    const double feet_y = p.box_y0 + p.box_h;
    const double torso_top = p.head_y + p.head_r;
    const double torso_h = (feet_y - torso_top) * 0.55;
    const double leg_h = feet_y - torso_top - torso_h;
    // far-to-near order: nearer sprites overwrite farther ones.
    painter.ellipse(p.head_x, torso_top + torso_h * 0.5, p.box_w * 0.45,
                    torso_h * 0.55, who, shirt);
    const int leg_w = std::max(1, p.box_w / 4);
    painter.bar(static_cast<int>(p.head_x) - leg_w - 1,
                static_cast<int>(torso_top + torso_h), leg_w,
                static_cast<int>(leg_h), who, pants);
    painter.bar(static_cast<int>(p.head_x) + 1,
                static_cast<int>(torso_top + torso_h), leg_w,
                static_cast<int>(leg_h), who, pants);
    painter.disc(p.head_x, p.head_y, p.head_r, who, skin);
  }

  // Global photometric pass: weather tint, fog, daylight, style grade, noise.
  const double lum = daylight_luminance(attrs.time_of_day);
  Rng noise_rng = Rng::derive(
      fnv1a64(&spec.location_id, sizeof(spec.location_id)), "render-noise",
      static_cast<std::uint64_t>(spec.camera_id),
      static_cast<std::uint64_t>(style));
  const double cx = (W - 1) * 0.5, cy = (H - 1) * 0.5;
  const double rmax2 = cx * cx + cy * cy;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double v[3];
      for (int c = 0; c < 3; ++c) {
        double u = img.at(c, y, x) * wt.mul[c];
        u = u * (1.0 - wt.fog) + 0.71 * wt.fog;
        v[c] = u * lum;
      }
      if (sp.mix > 0.0) {
        const double r = v[0], g = v[1], b = v[2];
        v[0] = r * (1.0 - sp.mix) + g * sp.mix;
        v[1] = g * (1.0 - sp.mix) + b * sp.mix;
        v[2] = b * (1.0 - sp.mix) + r * sp.mix;
      }
      const double vig =
          1.0 - sp.vignette * ((x - cx) * (x - cx) + (y - cy) * (y - cy)) / rmax2;
      const double n = noise_rng.uniform(-sp.noise, sp.noise);
      for (int c = 0; c < 3; ++c) {
        double u = std::clamp(v[c] * vig + n, 0.0, 1.0);
        if (sp.inv_gamma != 1.0) u = std::pow(u, sp.inv_gamma);
        img.at(c, y, x) = u;
      }
    }

  // Visible-pixel masks from the ownership buffer, box-local.
  out.person_masks.reserve(placements.size());
  for (std::size_t i = 0; i < placements.size(); ++i) {
    const PersonPlacement& p = placements[i];
    PersonMask m;
    m.img_h = H;
    m.img_w = W;
    m.x0 = std::max(0, p.box_x0);
    m.y0 = std::max(0, p.box_y0);
    const int x1 = std::min(W, p.box_x0 + p.box_w);
    const int y1 = std::min(H, p.box_y0 + p.box_h);
    m.w = std::max(0, x1 - m.x0);
    m.h = std::max(0, y1 - m.y0);
    m.bits.assign(static_cast<std::size_t>(m.w) * m.h, 0);
    for (int y = m.y0; y < m.y0 + m.h; ++y)
      for (int x = m.x0; x < m.x0 + m.w; ++x)
        if (owner[static_cast<std::size_t>(y) * W + x] == static_cast<int>(i))
          m.bits[static_cast<std::size_t>(y - m.y0) * m.w + (x - m.x0)] = 1;
    out.person_masks.push_back(std::move(m));
  }
  return out;
}

std::vector<std::array<double, 2>> prune_occluded(
    const std::vector<PersonPlacement>& placements,
    const std::vector<PersonMask>& person_masks, double threshold) {
  if (threshold < 0.0 || threshold > 1.0)
    throw ArgumentError(cat("occlusion threshold must be in [0,1], got ",
                            threshold));
  if (placements.size() != person_masks.size())
    throw ArgumentError("prune_occluded: masks not aligned with placements");
  std::vector<std::array<double, 2>> dots;
  for (std::size_t i = 0; i < placements.size(); ++i) {
    const PersonPlacement& p = placements[i];
    const PersonMask& m = person_masks[i];
    int denom = 0, num = 0;
    for (int y = static_cast<int>(std::floor(p.head_y - p.head_r));
         y <= static_cast<int>(std::ceil(p.head_y + p.head_r)); ++y)
      for (int x = static_cast<int>(std::floor(p.head_x - p.head_r));
           x <= static_cast<int>(std::ceil(p.head_x + p.head_r)); ++x) {
        const double dx = x - p.head_x, dy = y - p.head_y;
        if (dx * dx + dy * dy > p.head_r * p.head_r) continue;
        if (y < 0 || y >= m.img_h || x < 0 || x >= m.img_w) continue;
        ++denom;
        if (m.test(y, x)) ++num;
      }
    const double frac = denom > 0 ? static_cast<double>(num) / denom : 0.0;
    if (frac >= threshold) dots.push_back({p.head_x, p.head_y});
  }
  return dots;
}

Sample make_sample(const SceneSpec& spec, std::uint64_t seed, RenderStyle style,
                   double occlusion_threshold) {
  Sample s;
  s.spec = spec;
  s.attributes = sample_attributes(spec, seed);
  const auto placements = place_crowd(spec, s.attributes.target_count, seed);
  RenderResult r = render(spec, s.attributes, placements, style);
  s.dots = prune_occluded(placements, r.person_masks, occlusion_threshold);
  s.mask = Tensor({spec.height, spec.width});
  for (const PersonMask& m : r.person_masks)
    for (int y = m.y0; y < m.y0 + m.h; ++y)
      for (int x = m.x0; x < m.x0 + m.w; ++x)
        if (m.test(y, x)) s.mask.at(y, x) = 1.0;
  s.image = std::move(r.image);
  return s;
}

}  // namespace crowdlab::scene
