#pragma once

#include <string>
#include <utility>
#include <vector>

#include "crowdlab/dataset.hpp"
#include "crowdlab/tensor.hpp"

namespace crowdlab::reg {

// Density-map ceiling: values at or above `cap` are clamped to it, values
// below pass through untouched. Input maps must be nonnegative (a negative
// density is a broken contract upstream, not something to silently clamp).
Tensor density_clip(const Tensor& density, double cap);

// A scene-level admission rule: a record is kept only when every clause
// holds. `ratio` is count divided by the capacity of the record's level.
// All bounds are inclusive.
struct FilterRule {
  std::string name;
  int level_min = 0, level_max = 0;
  int time_min = 0, time_max = 0;  // minutes since midnight
  std::vector<int> weathers;
  double count_min = 0, count_max = 0;
  double ratio_min = 0, ratio_max = 0;
};

// Reads one rule from JSON: {"name", "levels":[lo,hi], "time":["HH:MM","HH:MM"],
// "weathers":[...], "count":[lo,hi], "ratio":[lo,hi]}.
FilterRule load_filter_rule(const std::string& path);

// Clauses are checked in a fixed order (level, time, weather, count, ratio);
// `reason` names the first clause that failed, empty when kept.
struct FilterDecision {
  bool keep = false;
  std::string reason;
};
FilterDecision check_record(const FilterRule& rule, const data::ManifestRecord& rec);

// Applies the rule to a subset of manifest records (all of them when `ids`
// is empty); rejected pairs are (manifest index, first failed clause).
struct FilterResult {
  std::vector<int> kept;
  std::vector<std::pair<int, std::string>> rejected;
};
FilterResult filter_manifest(const FilterRule& rule, const data::Manifest& m,
                             const std::vector<int>& ids = {});

// JSON rejection log: {"rule", "n_checked", "kept":[...], "rejected":[{"id","reason"},...]}.
void write_filter_log(const std::string& path, const FilterRule& rule, const FilterResult& fr);

}  // namespace crowdlab::reg
