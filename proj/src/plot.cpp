#include "crispdepth/plot.hpp"

#include <cmath>

#include "crispdepth/metrics.hpp"

namespace crisp {

namespace {

// viridis anchors, linearly interpolated
constexpr float kAnchors[9][3] = {
    {0.267f, 0.005f, 0.329f}, {0.283f, 0.141f, 0.458f}, {0.254f, 0.265f, 0.530f},
    {0.207f, 0.372f, 0.553f}, {0.164f, 0.471f, 0.558f}, {0.128f, 0.567f, 0.551f},
    {0.135f, 0.659f, 0.518f}, {0.267f, 0.749f, 0.441f}, {0.993f, 0.906f, 0.144f}};

void colormap(double t, float* rgb) {
    t = std::clamp(t, 0.0, 1.0) * 8.0;
    const int i = std::min(static_cast<int>(t), 7);
    const double f = t - i;
    for (int c = 0; c < 3; ++c)
        rgb[c] = static_cast<float>(kAnchors[i][c] * (1.0 - f) + kAnchors[i + 1][c] * f);
}

}  // namespace

Tensor colormap_depth(const Tensor& depth, float* out_min, float* out_max) {
    if (depth.c() != 1) throw ShapeError("colormap_depth expects (1,1,H,W)");
    const int H = depth.h(), W = depth.w();
    float lo = 0.0f, hi = 0.0f;
    bool first = true;
    for (int64_t i = 0; i < depth.size(); ++i) {
        const float v = depth.data()[i];
        if (v <= 0.0f) continue;
        if (first) {
            lo = hi = v;
            first = false;
        } else {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    if (out_min) *out_min = lo;
    if (out_max) *out_max = hi;
    const double span = hi > lo ? hi - lo : 1.0;

    const int bar = std::max(4, W / 16);
    Tensor out(1, 3, H, W + bar + 2);
    float rgb[3];
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const float v = depth.at(0, 0, y, x);
            if (v <= 0.0f) continue;  // invalid renders black
            colormap((v - lo) / span, rgb);
            for (int c = 0; c < 3; ++c) out.at(0, c, y, x) = rgb[c];
        }
        // colorbar: top = far, bottom = near
        const double t = H > 1 ? 1.0 - static_cast<double>(y) / (H - 1) : 1.0;
        colormap(t, rgb);
        for (int x = W + 2; x < W + 2 + bar; ++x)
            for (int c = 0; c < 3; ++c) out.at(0, c, y, x) = rgb[c];
    }
    return out;
}

Tensor boundary_overlay(const Tensor& depth, double threshold) {
    if (depth.c() != 1) throw ShapeError("boundary_overlay expects (1,1,H,W)");
    const Tensor boundary = extract_boundaries(depth, threshold);
    const int H = depth.h(), W = depth.w();
    float lo = 1e30f, hi = -1e30f;
    for (int64_t i = 0; i < depth.size(); ++i) {
        const float v = depth.data()[i];
        if (v > 0.0f) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    const double span = hi > lo ? hi - lo : 1.0;
    Tensor out(1, 3, H, W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (boundary.at(0, 0, y, x) != 0.0f) {
                out.at(0, 0, y, x) = 1.0f;
                continue;
            }
            const float v = depth.at(0, 0, y, x);
            const float g = v > 0.0f ? static_cast<float>(0.15 + 0.7 * (v - lo) / span)
                                     : 0.0f;
            for (int c = 0; c < 3; ++c) out.at(0, c, y, x) = g;
        }
    return out;
}

}  // namespace crisp
