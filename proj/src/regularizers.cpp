#include "crowdlab/regularizers.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "crowdlab/common.hpp"
#include "crowdlab/scene.hpp"
#include "json.hpp"

namespace crowdlab::reg {

Tensor density_clip(const Tensor& density, double cap) {
  if (!(cap > 0.0) || !std::isfinite(cap))
    throw ArgumentError(cat("density_clip: cap must be positive and finite, got ", cap));
  Tensor out = density;
  for (std::size_t i = 0; i < out.numel(); ++i) {
    if (out[i] < 0.0)
      throw ContractError(cat("density_clip: negative density ", out[i],
                              " at flat index ", i, "; upstream map is invalid"));
    if (out[i] > cap) out[i] = cap;
  }
  return out;
}

namespace {

int parse_hhmm(const std::string& s) {
  if (s.size() != 5 || s[2] != ':' || !std::isdigit(s[0]) || !std::isdigit(s[1]) ||
      !std::isdigit(s[3]) || !std::isdigit(s[4]))
    throw ConfigError(cat("filter rule: bad time '", s, "', expected HH:MM"));
  const int hh = (s[0] - '0') * 10 + (s[1] - '0');
  const int mm = (s[3] - '0') * 10 + (s[4] - '0');
  if (hh > 23 || mm > 59) throw ConfigError(cat("filter rule: time '", s, "' out of range"));
  return hh * 60 + mm;
}

}  // namespace

FilterRule load_filter_rule(const std::string& path) {
  std::ifstream f(path);
  if (!f.good()) throw IoError(cat("filter rule: cannot open '", path, "'"));
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(cat("filter rule '", path, "': bad JSON: ", e.what()));
  }
  FilterRule r;
  try {
    r.name = j.at("name").get<std::string>();
    const auto levels = j.at("levels").get<std::vector<int>>();
    const auto time = j.at("time").get<std::vector<std::string>>();
    const auto count = j.at("count").get<std::vector<double>>();
    const auto ratio = j.at("ratio").get<std::vector<double>>();
    r.weathers = j.at("weathers").get<std::vector<int>>();
    if (levels.size() != 2 || time.size() != 2 || count.size() != 2 || ratio.size() != 2)
      throw ConfigError(cat("filter rule '", path, "': range fields must have two entries"));
    r.level_min = levels[0];
    r.level_max = levels[1];
    r.time_min = parse_hhmm(time[0]);
    r.time_max = parse_hhmm(time[1]);
    r.count_min = count[0];
    r.count_max = count[1];
    r.ratio_min = ratio[0];
    r.ratio_max = ratio[1];
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(cat("filter rule '", path, "': ", e.what()));
  }
  if (r.level_min < 0 || r.level_max > 8 || r.level_min > r.level_max)
    throw ConfigError(cat("filter rule '", r.name, "': bad level range"));
  if (r.time_min > r.time_max)
    throw ConfigError(cat("filter rule '", r.name, "': bad time range"));
  if (r.weathers.empty()) throw ConfigError(cat("filter rule '", r.name, "': no weathers"));
  for (int w : r.weathers)
    if (w < 0 || w > 6) throw ConfigError(cat("filter rule '", r.name, "': bad weather ", w));
  if (r.count_min > r.count_max || r.count_min < 0)
    throw ConfigError(cat("filter rule '", r.name, "': bad count range"));
  if (r.ratio_min > r.ratio_max || r.ratio_min < 0 || r.ratio_max > 1.0)
    throw ConfigError(cat("filter rule '", r.name, "': bad ratio range"));
  return r;
}

FilterDecision check_record(const FilterRule& rule, const data::ManifestRecord& rec) {
  if (rec.level < rule.level_min || rec.level > rule.level_max) return {false, "level"};
  if (rec.time_of_day < rule.time_min || rec.time_of_day > rule.time_max)
    return {false, "time"};
  if (std::find(rule.weathers.begin(), rule.weathers.end(), rec.weather) == rule.weathers.end())
    return {false, "weather"};
  if (rec.count < rule.count_min || rec.count > rule.count_max) return {false, "count"};
  const double capacity = static_cast<double>(scene::level_capacity(rec.level));
  const double ratio = static_cast<double>(rec.count) / capacity;
  if (ratio < rule.ratio_min || ratio > rule.ratio_max) return {false, "ratio"};
  return {true, ""};
}

FilterResult filter_manifest(const FilterRule& rule, const data::Manifest& m,
                             const std::vector<int>& ids) {
  std::vector<int> use = ids;
  if (use.empty()) {
    use.resize(m.records.size());
    for (std::size_t i = 0; i < use.size(); ++i) use[i] = static_cast<int>(i);
  }
  FilterResult fr;
  for (int id : use) {
    if (id < 0 || id >= static_cast<int>(m.records.size()))
      throw ArgumentError(cat("filter_manifest: id ", id, " outside manifest of ",
                              m.records.size(), " records"));
    FilterDecision d = check_record(rule, m.records[static_cast<std::size_t>(id)]);
    if (d.keep)
      fr.kept.push_back(id);
    else
      fr.rejected.emplace_back(id, d.reason);
  }
  return fr;
}

void write_filter_log(const std::string& path, const FilterRule& rule, const FilterResult& fr) {
  nlohmann::json rej = nlohmann::json::array();
  for (const auto& [id, reason] : fr.rejected) rej.push_back({{"id", id}, {"reason", reason}});
  nlohmann::json j{{"rule", rule.name},
                   {"n_checked", fr.kept.size() + fr.rejected.size()},
                   {"kept", fr.kept},
                   {"rejected", rej}};
  std::ofstream f(path);
  if (!f.good()) throw IoError(cat("filter log: cannot open '", path, "' for writing"));
  f << j.dump(2) << "\n";
}

}  // namespace crowdlab::reg
