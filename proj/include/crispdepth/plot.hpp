#pragma once

#include "crispdepth/tensor.hpp"

namespace crisp {

// Perceptually-uniform colormapped depth image with a colorbar strip at the
// right edge. Invalid (non-positive) pixels render black.
Tensor colormap_depth(const Tensor& depth, float* out_min = nullptr,
                      float* out_max = nullptr);

// Grayscale depth with extracted boundary pixels painted red.
Tensor boundary_overlay(const Tensor& depth, double threshold = 0.1);

}  // namespace crisp
