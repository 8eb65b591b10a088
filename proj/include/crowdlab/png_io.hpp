#pragma once

#include <string>

#include "crowdlab/tensor.hpp"

namespace crowdlab::io {

// RGB images move as (3,H,W) tensors in [0,1]; 8-bit on disk.
void write_rgb8(const std::string& path, const Tensor& image);
Tensor read_rgb8(const std::string& path);

// Grayscale (H,W) in [0,1]; used for crowd masks (0 or 255 on disk).
void write_gray8(const std::string& path, const Tensor& image);
Tensor read_gray8(const std::string& path);

}  // namespace crowdlab::io
