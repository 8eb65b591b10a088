#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "crowdlab/rng.hpp"
#include "crowdlab/scene.hpp"

#include <cmath>
#include <set>

using namespace crowdlab;
using namespace crowdlab::scene;

namespace {

// Independent containment oracle: winding angle accumulation.
bool pip_oracle(const std::vector<std::array<double, 2>>& poly, double x,
                double y) {
  double angle = 0.0;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double x1 = poly[i][0] - x, y1 = poly[i][1] - y;
    const double x2 = poly[(i + 1) % n][0] - x, y2 = poly[(i + 1) % n][1] - y;
    angle += std::atan2(x1 * y2 - x2 * y1, x1 * x2 + y1 * y2);
  }
  return std::fabs(angle) > 3.141592653589793;
}

double edge_distance(const std::vector<std::array<double, 2>>& poly, double x,
                     double y) {
  double best = 1e300;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = poly[i];
    const auto& b = poly[(i + 1) % n];
    const double vx = b[0] - a[0], vy = b[1] - a[1];
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0 ? ((x - a[0]) * vx + (y - a[1]) * vy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = x - (a[0] + t * vx), dy = y - (a[1] + t * vy);
    best = std::min(best, std::sqrt(dx * dx + dy * dy));
  }
  return best;
}

SceneSpec toy_spec(int level) {
  SceneSpec s;
  s.location_id = 3;
  s.camera_id = 1;
  s.level = level;
  const auto hw = size_for_level(level);
  s.height = hw[0];
  s.width = hw[1];
  s.roi = {{5.0, 5.0},
           {s.width - 5.0, 6.0},
           {s.width - 4.0, s.height - 5.0},
           {4.0, s.height - 6.0}};
  return s;
}

}  // namespace

TEST_CASE("level capacities") {
  const int caps[9] = {10, 25, 50, 100, 300, 600, 1000, 2000, 4000};
  for (int l = 0; l < 9; ++l) CHECK(level_capacity(l) == caps[l]);
  CHECK_THROWS_AS(level_capacity(9), ArgumentError);
  CHECK_THROWS_AS(level_capacity(-1), ArgumentError);
}

TEST_CASE("image sizes divide by 8 and fit level capacity") {
  for (int l = 0; l < 9; ++l) {
    const auto hw = size_for_level(l);
    CHECK(hw[0] % 8 == 0);
    CHECK(hw[1] % 8 == 0);
    // Interior-cell headroom at one head per 8x8 cell.
    const int cells = (hw[0] / 8) * (hw[1] / 8);
    CHECK(cells > level_capacity(l));
  }
}

TEST_CASE("point_in_polygon agrees with winding oracle") {
  Rng rng(31);
  std::vector<std::array<double, 2>> convex = {
      {10, 5}, {90, 8}, {95, 70}, {8, 65}};
  std::vector<std::array<double, 2>> concave = {
      {10, 10}, {90, 10}, {90, 90}, {50, 40}, {10, 90}};
  for (const auto& poly : {convex, concave}) {
    int inside_seen = 0;
    for (int i = 0; i < 1000; ++i) {
      const double x = rng.uniform(0, 100), y = rng.uniform(0, 100);
      if (edge_distance(poly, x, y) < 1e-6) continue;
      const bool got = point_in_polygon(poly, x, y);
      CHECK(got == pip_oracle(poly, x, y));
      inside_seen += got;
    }
    CHECK(inside_seen > 100);
  }
}

TEST_CASE("build_scene_bank shape and determinism") {
  const auto bank = build_scene_bank(100, 7);
  CHECK(bank.size() == 400);
  std::set<int> levels;
  for (const auto& s : bank) {
    CHECK(s.camera_id >= 0);
    CHECK(s.camera_id <= 3);
    CHECK(s.level >= 0);
    CHECK(s.level <= 8);
    levels.insert(s.level);
    CHECK(s.roi.size() == 4);
    for (const auto& v : s.roi) {
      CHECK(v[0] >= 0);
      CHECK(v[0] <= s.width);
      CHECK(v[1] >= 0);
      CHECK(v[1] <= s.height);
    }
  }
  CHECK(levels.size() == 9);

  const auto one = build_scene_bank(1, 7);
  CHECK(one.size() == 4);
  for (const auto& s : one) CHECK(s.location_id == 0);

  const auto again = build_scene_bank(100, 7);
  for (std::size_t i = 0; i < bank.size(); ++i) {
    CHECK(bank[i].level == again[i].level);
    CHECK(bank[i].roi == again[i].roi);
  }
  const auto other = build_scene_bank(100, 8);
  bool differs = false;
  for (std::size_t i = 0; i < bank.size(); ++i)
    differs = differs || bank[i].roi != other[i].roi;
  CHECK(differs);

  CHECK_THROWS_AS(build_scene_bank(0, 7), ArgumentError);
}

TEST_CASE("sample_attributes ranges and coverage") {
  const SceneSpec s0 = toy_spec(0), s8 = toy_spec(8);
  std::set<int> weathers;
  for (int i = 0; i < 10000; ++i) {
    const auto a = sample_attributes(s0, static_cast<std::uint64_t>(i));
    CHECK(a.target_count >= 0);
    CHECK(a.target_count <= 10);
    CHECK(a.time_of_day >= 0);
    CHECK(a.time_of_day <= 1439);
    weathers.insert(a.weather);
  }
  CHECK(weathers.size() == 7);
  for (int i = 0; i < 200; ++i) {
    const auto a = sample_attributes(s8, static_cast<std::uint64_t>(i));
    CHECK(a.target_count >= 0);
    CHECK(a.target_count <= 4000);
  }
  const auto a1 = sample_attributes(s0, 11);
  const auto a2 = sample_attributes(s0, 11);
  CHECK(a1.target_count == a2.target_count);
  CHECK(a1.time_of_day == a2.time_of_day);
  CHECK(a1.weather == a2.weather);
}

TEST_CASE("place_crowd contracts") {
  const SceneSpec spec = toy_spec(5);
  CHECK(place_crowd(spec, 0, 1).empty());

  const auto ps = place_crowd(spec, 600, 1);
  CHECK(ps.size() == 600);
  for (const auto& p : ps) {
    CHECK(pip_oracle(spec.roi, p.head_x, p.head_y));
    CHECK(p.depth == doctest::Approx(depth_at(spec, p.box_y0 + p.box_h)));
  }
  for (std::size_t i = 1; i < ps.size(); ++i)
    CHECK(ps[i - 1].depth <= ps[i].depth);  // far to near

  const auto again = place_crowd(spec, 600, 1);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    CHECK(ps[i].head_x == again[i].head_x);
    CHECK(ps[i].head_y == again[i].head_y);
    CHECK(ps[i].appearance_seed == again[i].appearance_seed);
  }

  CHECK_THROWS_AS(place_crowd(spec, -1, 1), ArgumentError);
  try {
    place_crowd(spec, 1000000, 1);
    FAIL("expected CapacityError");
  } catch (const CapacityError& e) {
    CHECK(std::string(e.what()).find("roi area") != std::string::npos);
  }
}

TEST_CASE("place_crowd fills every level to capacity") {
  for (int l : {0, 4, 8}) {
    const SceneSpec spec = toy_spec(l);
    const auto ps = place_crowd(spec, level_capacity(l), 3);
    CHECK(static_cast<int>(ps.size()) == level_capacity(l));
  }
}

TEST_CASE("depth bands") {
  CHECK(depth_bands(0).empty());
  auto b = depth_bands(256);
  REQUIRE(b.size() == 1);
  CHECK(b[0] == std::array<int, 2>{0, 256});
  b = depth_bands(257);
  REQUIRE(b.size() == 2);
  CHECK(b[0][1] - b[0][0] == 129);
  CHECK(b[1][1] - b[1][0] == 128);
  b = depth_bands(600);
  REQUIRE(b.size() == 3);
  int total = 0;
  for (const auto& r : b) {
    CHECK(r[1] - r[0] <= 256);
    total += r[1] - r[0];
  }
  CHECK(total == 600);
}

TEST_CASE("render empty scene") {
  const SceneSpec spec = toy_spec(1);
  SceneAttributes attrs;
  const auto r = render(spec, attrs, {});
  CHECK(r.image.dim(0) == 3);
  CHECK(r.image.dim(1) == spec.height);
  CHECK(r.image.dim(2) == spec.width);
  CHECK(r.image.all_finite());
  CHECK(r.image.min() >= 0.0);
  CHECK(r.image.max() <= 1.0);
  CHECK(r.person_masks.empty());
}

TEST_CASE("render luminance tracks time of day") {
  const SceneSpec spec = toy_spec(1);
  const auto ps = place_crowd(spec, 5, 2);
  SceneAttributes noon{720, 0, 5}, midnight{0, 0, 5}, dawn{360, 0, 5};
  const double m_noon = render(spec, noon, ps).image.mean();
  const double m_dawn = render(spec, dawn, ps).image.mean();
  const double m_mid = render(spec, midnight, ps).image.mean();
  CHECK(m_mid < m_dawn);
  CHECK(m_dawn < m_noon);
}

TEST_CASE("nearer person occludes farther at shared footprint") {
  SceneSpec spec = toy_spec(1);
  const auto base = place_crowd(spec, 1, 5);
  PersonPlacement far = base[0], near = base[0];
  // Same column, nearer person shifted slightly down (greater depth).
  near.head_y += 3.0;
  near.box_y0 += 3;
  near.depth = depth_at(spec, near.box_y0 + near.box_h);
  SceneAttributes attrs{720, 0, 2};

  const auto solo_far = render(spec, attrs, {far});
  const auto pair = render(spec, attrs, {far, near});
  const auto& pf = pair.person_masks[0];
  const auto& pn = pair.person_masks[1];
  const auto& sf = solo_far.person_masks[0];

  int lost = 0;
  for (int y = 0; y < spec.height; ++y)
    for (int x = 0; x < spec.width; ++x) {
      CHECK(!(pf.test(y, x) && pn.test(y, x)));  // masks disjoint
      if (pf.test(y, x)) CHECK(sf.test(y, x));   // pair-far subset of solo-far
      if (sf.test(y, x) && !pf.test(y, x)) {
        CHECK(pn.test(y, x));  // every lost pixel went to the nearer person
        ++lost;
      }
    }
  CHECK(lost > 0);

  // Nearer person's mask unaffected by the farther one.
  const auto solo_near = render(spec, attrs, {near});
  for (int y = 0; y < spec.height; ++y)
    for (int x = 0; x < spec.width; ++x)
      CHECK(pn.test(y, x) == solo_near.person_masks[0].test(y, x));
}

TEST_CASE("prune_occluded") {
  SceneSpec spec = toy_spec(1);
  const auto ps = place_crowd(spec, 6, 9);
  SceneAttributes attrs{720, 0, 6};
  const auto r = render(spec, attrs, ps);

  CHECK_THROWS_AS(prune_occluded(ps, r.person_masks, -0.1), ArgumentError);
  CHECK_THROWS_AS(prune_occluded(ps, r.person_masks, 1.5), ArgumentError);

  CHECK(prune_occluded(ps, r.person_masks, 0.0).size() == ps.size());

  // Stack a person directly behind another so its head disappears.
  PersonPlacement back = ps[0], front = ps[0];
  front.head_y += 1.0;
  front.box_y0 += 1;
  front.box_h += 4;  // big enough to swallow the whole back sprite
  front.box_w += 6;
  front.box_x0 -= 3;
  front.head_r = back.head_r + 2.5;
  front.depth = back.depth + 0.01;
  const auto rr = render(spec, attrs, {back, front});
  const auto kept = prune_occluded({back, front}, rr.person_masks, 0.5);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0][0] == front.head_x);
}

TEST_CASE("make_sample invariants") {
  const SceneSpec spec = toy_spec(2);
  const Sample s = make_sample(spec, 21);
  CHECK(static_cast<int>(s.dots.size()) <= s.attributes.target_count);
  CHECK(s.image.all_finite());
  for (const auto& d : s.dots) {
    CHECK(pip_oracle(spec.roi, d[0], d[1]));
    // Each dot sits in a mask-positive neighborhood.
    bool near_mask = false;
    const int cy = static_cast<int>(d[1]), cx = static_cast<int>(d[0]);
    for (int y = std::max(0, cy - 4); y <= std::min(spec.height - 1, cy + 4); ++y)
      for (int x = std::max(0, cx - 4); x <= std::min(spec.width - 1, cx + 4); ++x)
        near_mask = near_mask || s.mask.at(y, x) > 0.5;
    CHECK(near_mask);
  }

  const Sample t = make_sample(spec, 21);
  REQUIRE(t.image.numel() == s.image.numel());
  bool same = t.dots == s.dots;
  for (std::size_t i = 0; i < s.image.numel(); ++i)
    same = same && s.image[i] == t.image[i];
  CHECK(same);
}
