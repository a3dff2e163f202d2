#pragma once

#include <filesystem>
#include <string>

#include "crispdepth/tensor.hpp"

namespace crisp::io {

// All writers are atomic: bytes land in a temp file that is renamed over the
// destination, so partial artifacts never appear.
void atomic_write_bytes(const std::filesystem::path& path, const void* data,
                        size_t nbytes);
void atomic_write_text(const std::filesystem::path& path, const std::string& text);

// 8-bit RGB PNG <-> (1,3,H,W) float in [0,1]
Tensor read_image_png(const std::filesystem::path& path);
void write_image_png(const std::filesystem::path& path, const Tensor& image);

// 16-bit grayscale PNG, value = millimeters <-> (1,1,H,W) float meters.
// Zero pixels mean invalid. Rejects other bit depths.
Tensor read_depth_png(const std::filesystem::path& path);
void write_depth_png(const std::filesystem::path& path, const Tensor& depth);

// 8-bit grayscale PNG of small integer ids <-> (1,1,H,W) float ids
Tensor read_mask_png(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const Tensor& mask);

// bilinear image resize / nearest depth-and-mask resize
Tensor resize_bilinear(const Tensor& image, int out_h, int out_w);
Tensor resize_nearest(const Tensor& map, int out_h, int out_w);

}  // namespace crisp::io
