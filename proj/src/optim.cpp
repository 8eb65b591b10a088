#include "crowdlab/optim.hpp"

#include <cmath>

#include "crowdlab/common.hpp"

namespace crowdlab::nn {

void Adam::step(ModelState& model, double lr) {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ArgumentError(cat("Adam: bad learning rate ", lr));
  ++t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (auto& [name, p] : model.params) {
    if (!p.requires_grad()) continue;
    const Tensor& g = p.grad();
    Tensor& val = p.mutable_value();
    auto mit = m.find(name);
    if (mit == m.end()) mit = m.emplace(name, Tensor(val.shape())).first;
    auto vit = v.find(name);
    if (vit == v.end()) vit = v.emplace(name, Tensor(val.shape())).first;
    Tensor& mt = mit->second;
    Tensor& vt = vit->second;
    if (!mt.same_shape(val) || !vt.same_shape(val))
      throw ContractError(cat("Adam: slot shape drifted for '", name, "'"));
    for (std::size_t i = 0; i < val.numel(); ++i) {
      const double gi = g[i];
      mt[i] = beta1 * mt[i] + (1.0 - beta1) * gi;
      vt[i] = beta2 * vt[i] + (1.0 - beta2) * gi * gi;
      const double mhat = mt[i] / c1;
      const double vhat = vt[i] / c2;
      val[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace crowdlab::nn
