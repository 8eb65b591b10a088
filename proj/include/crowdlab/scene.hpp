#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "crowdlab/tensor.hpp"

namespace crowdlab::scene {

// A parametric virtual scene: one surveillance view of one location.
struct SceneSpec {
  int location_id = 0;
  int camera_id = 0;  // 0..3, four cameras per location
  std::vector<std::array<double, 2>> roi;  // simple polygon, (x,y) px
  int level = 0;                           // 0..8 crowd-capacity category
  int height = 0, width = 0;               // image size px
};

struct SceneAttributes {
  int time_of_day = 720;  // minutes 0..1439
  int weather = 0;        // 0 clear, 1 clouds, 2 rain, 3 foggy, 4 thunder,
                          // 5 overcast, 6 extra sunny
  int target_count = 0;
};

struct PersonPlacement {
  double head_x = 0.0, head_y = 0.0;
  double head_r = 0.0;                  // head disc radius px
  int box_x0 = 0, box_y0 = 0;           // sprite bounding box
  int box_w = 0, box_h = 0;
  double depth = 0.0;                   // 0 far .. 1 near
  std::uint64_t appearance_seed = 0;
};

// Visible-pixel mask of one rendered person, stored box-local.
struct PersonMask {
  int img_h = 0, img_w = 0;
  int x0 = 0, y0 = 0, w = 0, h = 0;
  std::vector<std::uint8_t> bits;  // w*h, row-major, 1 = visible

  bool test(int y, int x) const {
    if (y < y0 || y >= y0 + h || x < x0 || x >= x0 + w) return false;
    return bits[static_cast<std::size_t>(y - y0) * w + (x - x0)] != 0;
  }
};

// Photometric rendering families. Same geometry statistics, different
// palette/gamma/noise, so they act as distinct visual domains.
enum class RenderStyle { kStudio = 0, kField = 1 };

struct Sample {
  Tensor image;  // (3,H,W) RGB in [0,1]
  std::vector<std::array<double, 2>> dots;  // visible heads
  Tensor mask;   // (H,W) in {0,1}
  SceneAttributes attributes;
  SceneSpec spec;
};

// Level -> maximum crowd count: 10,25,50,100,300,600,1000,2000,4000.
int level_capacity(int level);
// Image size grows with level so the densest category physically fits.
std::array<int, 2> size_for_level(int level);  // {height, width}

double polygon_area(const std::vector<std::array<double, 2>>& poly);
bool point_in_polygon(const std::vector<std::array<double, 2>>& poly, double x,
                      double y);

// Larger y (lower in frame) means nearer to the camera.
double depth_at(const SceneSpec& spec, double y);

std::vector<SceneSpec> build_scene_bank(int n_locations, std::uint64_t seed);

SceneAttributes sample_attributes(const SceneSpec& spec, std::uint64_t rng_seed);

// Exactly `count` placements with heads inside the roi, returned far-to-near.
// Throws CapacityError naming the roi area when the scene cannot hold `count`.
std::vector<PersonPlacement> place_crowd(const SceneSpec& spec, int count,
                                         std::uint64_t seed);

// Contiguous [begin,end) chunks of the far-to-near placement order, each
// holding at most 256 persons.
std::vector<std::array<int, 2>> depth_bands(int n_placements);

struct RenderResult {
  Tensor image;                        // (3,H,W) in [0,1]
  std::vector<PersonMask> person_masks;  // aligned with placements
};

RenderResult render(const SceneSpec& spec, const SceneAttributes& attrs,
                    const std::vector<PersonPlacement>& placements,
                    RenderStyle style = RenderStyle::kStudio);

// Head dots of persons whose visible head-disc fraction >= threshold.
std::vector<std::array<double, 2>> prune_occluded(
    const std::vector<PersonPlacement>& placements,
    const std::vector<PersonMask>& person_masks, double threshold);

// Full generation chain: attributes -> placement -> render -> prune.
Sample make_sample(const SceneSpec& spec, std::uint64_t seed,
                   RenderStyle style = RenderStyle::kStudio,
                   double occlusion_threshold = 0.5);

}  // namespace crowdlab::scene
