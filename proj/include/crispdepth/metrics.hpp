#pragma once

#include <cstdint>
#include <vector>

#include "crispdepth/tensor.hpp"

namespace crisp {

// Double-precision H x W grid for distance transforms.
struct DoubleGrid {
    int h = 0, w = 0;
    std::vector<double> v;

    DoubleGrid() = default;
    DoubleGrid(int h_, int w_) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, 0.0) {}
    double at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
    double& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
};

struct MetricReport {
    double abs_rel = 0.0;
    double rmse = 0.0;
    double delta1 = 0.0;
    double delta2 = 0.0;
    double delta3 = 0.0;
    double dbe_acc = 0.0;      // meaningful only when dbe_defined
    bool dbe_defined = false;
    int64_t n_valid = 0;
};

// Abs.Rel / RMSE / delta thresholds over valid pixels (gt > 0). Median
// scaling aligns the prediction to the ground truth first. Throws when no
// pixel is valid, naming the frame.
MetricReport standard_metrics(const Tensor& pred, const Tensor& gt,
                              bool median_scale = true,
                              const std::string& frame_name = "");

// Sobel magnitude of log-depth thresholded; pixels whose 3x3 stencil touches
// an invalid (non-positive) depth are never boundaries. Returns 0/1 map.
Tensor extract_boundaries(const Tensor& depth, double threshold = 0.1);

// Exact Euclidean distance to the nearest nonzero pixel (two-pass squared
// distance transform). Throws if the mask is empty.
DoubleGrid euclidean_distance_transform(const Tensor& mask);

struct BoundaryMaps {
    Tensor pred_bin;
    Tensor gt_bin;
    DoubleGrid gt_distance;
};

// Mean ground-truth-boundary distance sampled at predicted boundary pixels.
// Undefined (defined=false) when either boundary set is empty.
double dbe_from_boundaries(const Tensor& pred_bin, const Tensor& gt_bin, bool* defined);
double dbe_accuracy(const Tensor& pred, const Tensor& gt, double threshold = 0.1,
                    bool* defined = nullptr);

}  // namespace crisp
