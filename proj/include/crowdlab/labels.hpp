#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "crowdlab/dataset.hpp"
#include "crowdlab/scene.hpp"
#include "crowdlab/tensor.hpp"

namespace crowdlab::labels {

// Density target: sum(values) = lnf * number of dots, each truncated kernel
// renormalized so boundary dots lose no mass.
struct DensityMap {
  Tensor values;       // (H,W), all >= 0
  double lnf = 100.0;  // label normalization factor
  double sigma = 4.0;  // Gaussian bandwidth px
};

DensityMap density_from_dots(const std::vector<std::array<double, 2>>& dots,
                             int height, int width, double sigma = 4.0,
                             double lnf = 100.0);

enum class SplitStrategy { kRandom, kCrossCamera, kCrossLocation };
SplitStrategy parse_strategy(const std::string& name);
std::string strategy_name(SplitStrategy s);

// Disjoint, jointly exhaustive index sets over a manifest. Validation is
// carved from the training side only.
struct Split {
  SplitStrategy strategy = SplitStrategy::kRandom;
  std::uint64_t seed = 0;
  std::vector<int> train_ids, val_ids, test_ids;
};

Split split_manifest(const data::Manifest& manifest, SplitStrategy strategy,
                     std::uint64_t seed);

void write_split(const std::string& path, const Split& s);
Split read_split(const std::string& path);

// Pixelwise OR of person masks onto a (height,width) canvas.
Tensor mask_from_render(const std::vector<scene::PersonMask>& person_masks,
                        int height, int width);

}  // namespace crowdlab::labels
