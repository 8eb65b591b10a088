#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "crowdlab/nets.hpp"
#include "crowdlab/tensor.hpp"

namespace crowdlab::nn {

// Adam with bias correction. Slots are keyed by parameter name and created
// lazily; the whole struct is plain data so checkpoints can serialize it.
struct Adam {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t t = 0;
  std::map<std::string, Tensor> m, v;

  // One update over every grad-bearing parameter of `model`.
  void step(ModelState& model, double lr);
};

}  // namespace crowdlab::nn
