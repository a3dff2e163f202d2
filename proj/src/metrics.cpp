#include "crispdepth/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "crispdepth/common.hpp"

namespace crisp {

namespace {

double select_median(std::vector<double> v) {
    const size_t k = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + k, v.end());
    return v[k];
}

// 1D squared distance transform (Felzenszwalb & Huttenlocher)
void dt_1d(const std::vector<double>& f, int n, std::vector<double>& d) {
    std::vector<int> hull(n);
    std::vector<double> z(n + 1);
    int k = 0;
    hull[0] = 0;
    z[0] = -std::numeric_limits<double>::infinity();
    z[1] = std::numeric_limits<double>::infinity();
    for (int q = 1; q < n; ++q) {
        double s;
        while (true) {
            const int p = hull[k];
            s = ((f[q] + static_cast<double>(q) * q) - (f[p] + static_cast<double>(p) * p)) /
                (2.0 * (q - p));
            if (s <= z[k]) {
                --k;
            } else {
                break;
            }
        }
        ++k;
        hull[k] = q;
        z[k] = s;
        z[k + 1] = std::numeric_limits<double>::infinity();
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        const double diff = q - hull[k];
        d[q] = diff * diff + f[hull[k]];
    }
}

}  // namespace

MetricReport standard_metrics(const Tensor& pred, const Tensor& gt, bool median_scale,
                              const std::string& frame_name) {
    if (!pred.same_shape(gt))
        throw ShapeError("metrics: prediction " + pred.shape_str() +
                         " does not match ground truth " + gt.shape_str());

    std::vector<double> pv, gv;
    for (int64_t i = 0; i < gt.size(); ++i) {
        const double g = gt.data()[i];
        if (g > 0.0) {
            gv.push_back(g);
            pv.push_back(pred.data()[i]);
        }
    }
    if (gv.empty())
        throw Error("metrics: no valid ground-truth pixels" +
                    (frame_name.empty() ? std::string() : " in frame " + frame_name));

    double scale = 1.0;
    if (median_scale) {
        const double mp = select_median(pv);
        if (mp <= 0.0) throw Error("metrics: non-positive prediction median");
        scale = select_median(gv) / mp;
    }

    MetricReport r;
    r.n_valid = static_cast<int64_t>(gv.size());
    double abs_rel = 0.0, sq = 0.0;
    int64_t c1 = 0, c2 = 0, c3 = 0;
    for (size_t i = 0; i < gv.size(); ++i) {
        const double p = pv[i] * scale;
        const double g = gv[i];
        abs_rel += std::fabs(g - p) / g;
        sq += (g - p) * (g - p);
        const double ratio = std::max(p / g, g / p);
        if (ratio < 1.25) ++c1;
        if (ratio < 1.25 * 1.25) ++c2;
        if (ratio < 1.25 * 1.25 * 1.25) ++c3;
    }
    const double n = static_cast<double>(gv.size());
    r.abs_rel = abs_rel / n;
    r.rmse = std::sqrt(sq / n);
    r.delta1 = c1 / n;
    r.delta2 = c2 / n;
    r.delta3 = c3 / n;
    return r;
}

Tensor extract_boundaries(const Tensor& depth, double threshold) {
    if (depth.c() != 1) throw ShapeError("extract_boundaries expects (1,1,H,W)");
    const int H = depth.h(), W = depth.w();

    // log-depth with validity; Sobel only where the full stencil is valid
    DoubleGrid logd(H, W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const double d = depth.at(0, 0, y, x);
            logd.at(y, x) = d > 0.0 ? std::log(d) : std::numeric_limits<double>::quiet_NaN();
        }

    Tensor out(1, 1, H, W);
    if (!(threshold < std::numeric_limits<double>::infinity())) return out;
    const int sobel_x[9] = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
    const int sobel_y[9] = {-1, -2, -1, 0, 0, 0, 1, 2, 1};
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double gx = 0.0, gy = 0.0;
            bool ok = true;
            for (int dy = -1; dy <= 1 && ok; ++dy)
                for (int dx = -1; dx <= 1 && ok; ++dx) {
                    const int yy = std::clamp(y + dy, 0, H - 1);
                    const int xx = std::clamp(x + dx, 0, W - 1);
                    const double v = logd.at(yy, xx);
                    if (std::isnan(v)) {
                        ok = false;
                        break;
                    }
                    const int k = (dy + 1) * 3 + (dx + 1);
                    gx += sobel_x[k] * v;
                    gy += sobel_y[k] * v;
                }
            if (ok && std::sqrt(gx * gx + gy * gy) > threshold)
                out.at(0, 0, y, x) = 1.0f;
        }
    return out;
}

DoubleGrid euclidean_distance_transform(const Tensor& mask) {
    if (mask.c() != 1) throw ShapeError("distance transform expects (1,1,H,W)");
    const int H = mask.h(), W = mask.w();
    bool any = false;
    for (int64_t i = 0; i < mask.size(); ++i)
        if (mask.data()[i] != 0.0f) {
            any = true;
            break;
        }
    if (!any) throw Error("distance transform of an empty mask");

    constexpr double kInf = 1e18;
    DoubleGrid sq(H, W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            sq.at(y, x) = mask.at(0, 0, y, x) != 0.0f ? 0.0 : kInf;

    // columns then rows
    std::vector<double> f(std::max(H, W)), d(std::max(H, W));
    for (int x = 0; x < W; ++x) {
        for (int y = 0; y < H; ++y) f[y] = sq.at(y, x);
        dt_1d(f, H, d);
        for (int y = 0; y < H; ++y) sq.at(y, x) = d[y];
    }
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) f[x] = sq.at(y, x);
        dt_1d(f, W, d);
        for (int x = 0; x < W; ++x) sq.at(y, x) = std::sqrt(d[x]);
    }
    return sq;
}

double dbe_from_boundaries(const Tensor& pred_bin, const Tensor& gt_bin, bool* defined) {
    if (!pred_bin.same_shape(gt_bin))
        throw ShapeError("boundary maps differ in shape");
    bool any_pred = false, any_gt = false;
    for (int64_t i = 0; i < pred_bin.size(); ++i) {
        any_pred |= pred_bin.data()[i] != 0.0f;
        any_gt |= gt_bin.data()[i] != 0.0f;
    }
    if (!any_pred || !any_gt) {
        if (defined) *defined = false;
        warn(std::string("boundary metric undefined: ") +
             (!any_pred ? "no predicted" : "no ground-truth") + " boundary pixels");
        return 0.0;
    }

    const DoubleGrid dist = euclidean_distance_transform(gt_bin);
    double sum = 0.0;
    int64_t count = 0;
    const int H = pred_bin.h(), W = pred_bin.w();
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            if (pred_bin.at(0, 0, y, x) != 0.0f) {
                sum += dist.at(y, x);
                ++count;
            }
    if (defined) *defined = true;
    return sum / static_cast<double>(count);
}

double dbe_accuracy(const Tensor& pred, const Tensor& gt, double threshold, bool* defined) {
    if (!pred.same_shape(gt)) throw ShapeError("dbe_accuracy shapes differ");
    return dbe_from_boundaries(extract_boundaries(pred, threshold),
                               extract_boundaries(gt, threshold), defined);
}

}  // namespace crisp
