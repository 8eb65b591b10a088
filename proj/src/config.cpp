#include "crowdlab/config.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <type_traits>

#include "crowdlab/common.hpp"

namespace crowdlab::cfg {

namespace {

void check_positive(double v, const char* key) {
  if (!(v > 0.0) || !std::isfinite(v))
    throw ConfigError(cat("config ", key, ": must be positive and finite, got ", v));
}

void check_nonneg(double v, const char* key) {
  if (!(v >= 0.0) || !std::isfinite(v))
    throw ConfigError(cat("config ", key, ": must be nonnegative and finite, got ", v));
}

void check_min_int(int v, int lo, const char* key) {
  if (v < lo) throw ConfigError(cat("config ", key, ": must be at least ", lo, ", got ", v));
}

template <typename T>
void take(const nlohmann::json& group, const char* group_name, const char* key, T* out) {
  if (!group.contains(key)) return;
  const nlohmann::json& v = group.at(key);
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean())
      throw ConfigError(cat("config ", group_name, ".", key, ": expected a boolean, got ",
                            v.dump()));
    *out = v.get<bool>();
  } else if constexpr (std::is_same_v<T, int>) {
    if (!v.is_number_integer())
      throw ConfigError(cat("config ", group_name, ".", key, ": expected an integer, got ",
                            v.dump()));
    const auto wide = v.get<std::int64_t>();
    if (wide < std::numeric_limits<int>::min() || wide > std::numeric_limits<int>::max())
      throw ConfigError(cat("config ", group_name, ".", key, ": integer out of range: ",
                            v.dump()));
    *out = static_cast<int>(wide);
  } else if constexpr (std::is_same_v<T, std::uint64_t>) {
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0))
      throw ConfigError(cat("config ", group_name, ".", key,
                            ": expected a nonnegative integer, got ", v.dump()));
    *out = v.get<std::uint64_t>();
  } else if constexpr (std::is_same_v<T, double>) {
    if (!v.is_number())
      throw ConfigError(cat("config ", group_name, ".", key, ": expected a number, got ",
                            v.dump()));
    *out = v.get<double>();
  } else {
    static_assert(std::is_same_v<T, std::string>);
    if (!v.is_string())
      throw ConfigError(cat("config ", group_name, ".", key, ": expected a string, got ",
                            v.dump()));
    *out = v.get<std::string>();
  }
}

void reject_unknown(const nlohmann::json& group, const char* group_name,
                    std::initializer_list<const char*> known) {
  for (const auto& [key, val] : group.items()) {
    bool ok = false;
    for (const char* k : known)
      if (key == k) ok = true;
    if (!ok) throw ConfigError(cat("unknown configuration key '", group_name, ".", key, "'"));
  }
}

}  // namespace

Config validate_config(const nlohmann::json& raw) {
  if (!raw.is_object()) throw ConfigError("config: top level must be a JSON object");
  for (const auto& [key, val] : raw.items()) {
    if (key != "train" && key != "model" && key != "loss" && key != "data")
      throw ConfigError(cat("unknown configuration key '", key, "'"));
    if (!val.is_object())
      throw ConfigError(cat("config ", key, ": must be an object of settings"));
  }
  Config c;
  const nlohmann::json empty = nlohmann::json::object();
  const nlohmann::json& train = raw.contains("train") ? raw.at("train") : empty;
  const nlohmann::json& model = raw.contains("model") ? raw.at("model") : empty;
  const nlohmann::json& loss = raw.contains("loss") ? raw.at("loss") : empty;
  const nlohmann::json& data = raw.contains("data") ? raw.at("data") : empty;

  reject_unknown(train, "train",
                 {"lr", "dr", "epochs", "pretrain_epochs", "batch", "crop", "seed", "d_lr"});
  reject_unknown(model, "model",
                 {"base_channels", "encoder_channels", "with_seg", "gen_channels", "n_res",
                  "disc_channels", "dc_channels"});
  reject_unknown(loss, "loss",
                 {"alpha", "beta", "lambda_adv", "lambda_cycle", "mtl_seg", "use_ssim_cycle"});
  reject_unknown(data, "data", {"lnf", "sigma", "rule", "density_clip"});

  take(train, "train", "lr", &c.lr);
  take(train, "train", "dr", &c.dr);
  take(train, "train", "epochs", &c.epochs);
  take(train, "train", "pretrain_epochs", &c.pretrain_epochs);
  take(train, "train", "batch", &c.batch);
  take(train, "train", "crop", &c.crop);
  take(train, "train", "seed", &c.seed);
  take(train, "train", "d_lr", &c.d_lr);
  take(model, "model", "base_channels", &c.base_channels);
  take(model, "model", "encoder_channels", &c.encoder_channels);
  take(model, "model", "with_seg", &c.with_seg);
  take(model, "model", "gen_channels", &c.gen_channels);
  take(model, "model", "n_res", &c.n_res);
  take(model, "model", "disc_channels", &c.disc_channels);
  take(model, "model", "dc_channels", &c.dc_channels);
  take(loss, "loss", "alpha", &c.alpha);
  take(loss, "loss", "beta", &c.beta);
  take(loss, "loss", "lambda_adv", &c.lambda_adv);
  take(loss, "loss", "lambda_cycle", &c.lambda_cycle);
  take(loss, "loss", "mtl_seg", &c.mtl_seg);
  take(loss, "loss", "use_ssim_cycle", &c.use_ssim_cycle);
  take(data, "data", "lnf", &c.lnf);
  take(data, "data", "sigma", &c.sigma);
  take(data, "data", "rule", &c.rule);
  take(data, "data", "density_clip", &c.density_clip);

  check_positive(c.lr, "train.lr");
  if (!(c.dr > 0.0 && c.dr <= 1.0))
    throw ConfigError(cat("config train.dr: decay rate must be in (0,1], got ", c.dr));
  check_min_int(c.epochs, 1, "train.epochs");
  check_min_int(c.pretrain_epochs, 0, "train.pretrain_epochs");
  check_min_int(c.batch, 1, "train.batch");
  check_min_int(c.crop, 0, "train.crop");
  if (c.crop % 8 != 0)
    throw ConfigError(cat("config train.crop: must be a multiple of 8, got ", c.crop));
  check_positive(c.d_lr, "train.d_lr");
  check_min_int(c.base_channels, 1, "model.base_channels");
  check_min_int(c.encoder_channels, 1, "model.encoder_channels");
  check_min_int(c.gen_channels, 1, "model.gen_channels");
  check_min_int(c.n_res, 0, "model.n_res");
  check_min_int(c.disc_channels, 1, "model.disc_channels");
  check_min_int(c.dc_channels, 1, "model.dc_channels");
  check_nonneg(c.alpha, "loss.alpha");
  check_nonneg(c.beta, "loss.beta");
  check_nonneg(c.lambda_adv, "loss.lambda_adv");
  check_nonneg(c.lambda_cycle, "loss.lambda_cycle");
  check_nonneg(c.mtl_seg, "loss.mtl_seg");
  check_positive(c.lnf, "data.lnf");
  check_positive(c.sigma, "data.sigma");
  check_nonneg(c.density_clip, "data.density_clip");
  return c;
}

Config apply_overrides(const Config& base, const std::vector<std::string>& overrides) {
  nlohmann::json j = to_json(base);
  for (const std::string& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError(cat("override '", ov, "': expected group.key=value"));
    const std::string path = ov.substr(0, eq);
    const std::string val = ov.substr(eq + 1);
    const auto dot = path.find('.');
    if (dot == std::string::npos || dot == 0 || dot + 1 >= path.size())
      throw ConfigError(cat("override '", ov, "': key must be dotted as group.key"));
    const std::string group = path.substr(0, dot);
    const std::string key = path.substr(dot + 1);
    nlohmann::json parsed;
    try {
      parsed = nlohmann::json::parse(val);
    } catch (const nlohmann::json::exception&) {
      parsed = val;  // bare word: treat as string
    }
    if (!j.contains(group))
      throw ConfigError(cat("unknown configuration key '", path, "'"));
    j[group][key] = parsed;
  }
  return validate_config(j);
}

nlohmann::json to_json(const Config& c) {
  return nlohmann::json{
      {"train",
       {{"lr", c.lr},
        {"dr", c.dr},
        {"epochs", c.epochs},
        {"pretrain_epochs", c.pretrain_epochs},
        {"batch", c.batch},
        {"crop", c.crop},
        {"seed", c.seed},
        {"d_lr", c.d_lr}}},
      {"model",
       {{"base_channels", c.base_channels},
        {"encoder_channels", c.encoder_channels},
        {"with_seg", c.with_seg},
        {"gen_channels", c.gen_channels},
        {"n_res", c.n_res},
        {"disc_channels", c.disc_channels},
        {"dc_channels", c.dc_channels}}},
      {"loss",
       {{"alpha", c.alpha},
        {"beta", c.beta},
        {"lambda_adv", c.lambda_adv},
        {"lambda_cycle", c.lambda_cycle},
        {"mtl_seg", c.mtl_seg},
        {"use_ssim_cycle", c.use_ssim_cycle}}},
      {"data",
       {{"lnf", c.lnf},
        {"sigma", c.sigma},
        {"rule", c.rule},
        {"density_clip", c.density_clip}}}};
}

std::string config_hash(const Config& c) {
  const std::string canon = to_json(c).dump();
  return hex64(fnv1a64(canon));
}

Config load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f.good()) throw IoError(cat("config: cannot open '", path, "'"));
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(cat("config '", path, "': bad JSON: ", e.what()));
  }
  return validate_config(j);
}

void write_config_file(const std::string& path, const Config& c) {
  std::ofstream f(path);
  if (!f.good()) throw IoError(cat("config: cannot write '", path, "'"));
  f << to_json(c).dump(2) << "\n";
}

}  // namespace crowdlab::cfg
