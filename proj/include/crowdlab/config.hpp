#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace crowdlab::cfg {

// Full training configuration. Every field has a default, so an empty JSON
// object is a valid input; validate_config fills the rest and rejects
// anything it does not recognize.
struct Config {
  // train
  double lr = 1e-5;
  double dr = 0.995;
  int epochs = 50;
  int pretrain_epochs = 20;
  int batch = 128;  // crop pairs drawn per epoch in adaptation; images otherwise
  int crop = 64;    // square crop side (multiple of 8); 0 trains on full images
  uint64_t seed = 1;
  double d_lr = 1e-4;  // domain-classifier learning rate

  // model
  int base_channels = 12;
  int encoder_channels = 16;
  bool with_seg = false;
  int gen_channels = 12;
  int n_res = 2;
  int disc_channels = 12;
  int dc_channels = 16;

  // loss
  double alpha = 1.0;
  double beta = 0.1;
  double lambda_adv = 0.01;
  double lambda_cycle = 10.0;
  double mtl_seg = 0.01;
  bool use_ssim_cycle = true;

  // data
  double lnf = 100.0;
  double sigma = 4.0;
  std::string rule;          // admission rule name; empty = keep everything
  double density_clip = 0.0;  // per-pixel label ceiling; 0 disables
};

// Parses a (possibly partial) nested JSON config {"train":{...},"model":{...},
// "loss":{...},"data":{...}}, fills defaults, and rejects unknown keys, wrong
// types, and out-of-range values with ConfigError naming the dotted key.
Config validate_config(const nlohmann::json& raw);

// Applies "group.key=value" override strings on top of a config and
// re-validates. Values are parsed as JSON scalars; bare words become strings.
Config apply_overrides(const Config& base, const std::vector<std::string>& overrides);

// Canonical nested JSON with every key present.
nlohmann::json to_json(const Config& c);

// Stable content hash of the canonical form, as 16 hex digits.
std::string config_hash(const Config& c);

Config load_config_file(const std::string& path);
void write_config_file(const std::string& path, const Config& c);

}  // namespace crowdlab::cfg
