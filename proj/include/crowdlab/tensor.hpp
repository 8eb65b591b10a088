#pragma once

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "crowdlab/common.hpp"

namespace crowdlab {

// Dense row-major double tensor, rank 0..4. Value semantics.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape, double fill = 0.0)
      : shape_(std::move(shape)) {
    std::size_t n = 1;
    for (int d : shape_) {
      if (d < 0) throw ShapeError(cat("negative dimension ", d));
      n *= static_cast<std::size_t>(d);
    }
    data_.assign(n, fill);
  }

  Tensor(std::initializer_list<int> shape, double fill = 0.0)
      : Tensor(std::vector<int>(shape), fill) {}

  static Tensor scalar(double v) {
    Tensor t(std::vector<int>{});
    t.data_ = {v};
    return t;
  }

  static Tensor zeros_like(const Tensor& o) { return Tensor(o.shape_); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Row-major accessors; rank is asserted by arity.
  double& at() { return data_[0]; }
  double at() const { return data_[0]; }
  double& at(int i) { return data_[static_cast<std::size_t>(i)]; }
  double at(int i) const { return data_[static_cast<std::size_t>(i)]; }
  double& at(int i, int j) {
    return data_[static_cast<std::size_t>(i) * su(1) + static_cast<std::size_t>(j)];
  }
  double at(int i, int j) const {
    return data_[static_cast<std::size_t>(i) * su(1) + static_cast<std::size_t>(j)];
  }
  double& at(int i, int j, int k) {
    return data_[(static_cast<std::size_t>(i) * su(1) + static_cast<std::size_t>(j)) * su(2) +
                 static_cast<std::size_t>(k)];
  }
  double at(int i, int j, int k) const {
    return data_[(static_cast<std::size_t>(i) * su(1) + static_cast<std::size_t>(j)) * su(2) +
                 static_cast<std::size_t>(k)];
  }
  double& at(int i, int j, int k, int l) {
    return data_[((static_cast<std::size_t>(i) * su(1) + static_cast<std::size_t>(j)) * su(2) +
                  static_cast<std::size_t>(k)) *
                     su(3) +
                 static_cast<std::size_t>(l)];
  }
  double at(int i, int j, int k, int l) const {
    return data_[((static_cast<std::size_t>(i) * su(1) + static_cast<std::size_t>(j)) * su(2) +
                  static_cast<std::size_t>(k)) *
                     su(3) +
                 static_cast<std::size_t>(l)];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  double sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }
  double mean() const { return data_.empty() ? 0.0 : sum() / static_cast<double>(data_.size()); }
  double min() const { return data_.empty() ? 0.0 : *std::min_element(data_.begin(), data_.end()); }
  double max() const { return data_.empty() ? 0.0 : *std::max_element(data_.begin(), data_.end()); }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  std::size_t su(int i) const { return static_cast<std::size_t>(shape_[static_cast<std::size_t>(i)]); }

  std::vector<int> shape_;
  std::vector<double> data_;
};

inline std::string shape_str(const Tensor& t) {
  std::string s = "(";
  for (int i = 0; i < t.rank(); ++i) s += (i ? "," : "") + std::to_string(t.dim(i));
  return s + ")";
}

// Mass-preserving downsample: each output cell is the sum of a factor x factor
// block. Input dims must divide evenly.
inline Tensor sum_pool(const Tensor& hw, int factor) {
  if (hw.rank() != 2) throw ShapeError(cat("sum_pool expects rank-2, got ", shape_str(hw)));
  const int H = hw.dim(0), W = hw.dim(1);
  if (factor < 1 || H % factor != 0 || W % factor != 0)
    throw ShapeError(cat("sum_pool: ", H, "x", W, " not divisible by ", factor));
  Tensor out({H / factor, W / factor});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) out.at(y / factor, x / factor) += hw.at(y, x);
  return out;
}

}  // namespace crowdlab
