#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "crowdlab/nets.hpp"
#include "crowdlab/optim.hpp"

namespace crowdlab::nn {

struct Checkpoint {
  ModelState model;
  std::optional<Adam> opt;
  int64_t step = 0;
  std::string config_hash;
};

// Binary format: 8-byte magic, u64 little-endian header length, JSON header
// (arch id, hyperparameters, parameter names + shapes, step, config hash,
// optimizer metadata), then little-endian f32 payloads in header order —
// parameters first, then Adam m and v slots when an optimizer is included.
// Weights pass through f32 on the way out, so a save/load/save cycle is
// byte-identical.
void save_checkpoint(const std::string& path, const ModelState& model,
                     const Adam* opt = nullptr, int64_t step = 0,
                     const std::string& config_hash = "");

Checkpoint load_checkpoint(const std::string& path);

}  // namespace crowdlab::nn
