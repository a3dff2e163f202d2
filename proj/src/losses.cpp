#include "crispdepth/losses.hpp"

#include <cmath>

namespace crisp {

using ad::Var;

namespace {

constexpr float kSsimC1 = 0.01f * 0.01f;
constexpr float kSsimC2 = 0.03f * 0.03f;

// 3x3 box mean via a constant depthwise conv on reflect-padded input
Var box3(const Var& x) {
    const int C = x->value.c();
    Tensor w(C, 1, 3, 3);
    for (int64_t i = 0; i < w.size(); ++i) w.data()[i] = 1.0f / 9.0f;
    Var padded = ad::pad2d(x, 1, 1, 1, 1, ad::PadMode::kReflect);
    ad::ConvOpts opts;
    opts.groups = C;
    return ad::conv2d(padded, ad::constant(std::move(w)), nullptr, opts);
}

// channel reduction via a constant 1x1 all-ones conv
Var channel_sum(const Var& x) {
    Tensor w(1, x->value.c(), 1, 1);
    for (int64_t i = 0; i < w.size(); ++i) w.data()[i] = 1.0f;
    return ad::conv2d(x, ad::constant(std::move(w)), nullptr, ad::ConvOpts{});
}

Var conv_fixed(const Var& x, const Tensor& kernel, int pad_x, int pad_y) {
    Var padded = ad::pad2d(x, pad_x, pad_x, pad_y, pad_y, ad::PadMode::kReplicate);
    return ad::conv2d(padded, ad::constant(kernel), nullptr, ad::ConvOpts{});
}

Tensor central_diff_x_kernel() {
    Tensor k(1, 1, 1, 3);
    k.data()[0] = -0.5f;
    k.data()[1] = 0.0f;
    k.data()[2] = 0.5f;
    return k;
}

Tensor central_diff_y_kernel() {
    Tensor k(1, 1, 3, 1);
    k.data()[0] = -0.5f;
    k.data()[1] = 0.0f;
    k.data()[2] = 0.5f;
    return k;
}

Tensor sobel_x_kernel() {
    Tensor k(1, 1, 3, 3);
    const float v[9] = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
    std::copy(v, v + 9, k.data());
    return k;
}

Tensor sobel_y_kernel() {
    Tensor k(1, 1, 3, 3);
    const float v[9] = {-1, -2, -1, 0, 0, 0, 1, 2, 1};
    std::copy(v, v + 9, k.data());
    return k;
}

// unit surface normals from depth gradients: (-dx, -dy, 1)/norm, (1,3,H,W)
Var normal_map(const Var& depth) {
    Var gx = conv_fixed(depth, central_diff_x_kernel(), 1, 0);
    Var gy = conv_fixed(depth, central_diff_y_kernel(), 0, 1);
    Var norm = ad::sqrt(ad::add_const(ad::add(ad::square(gx), ad::square(gy)), 1.0f));
    Var nx = ad::div(ad::neg(gx), norm);
    Var ny = ad::div(ad::neg(gy), norm);
    Var nz = ad::div(ad::constant(Tensor::scalar(1.0f)), norm);
    return ad::concat_channels(ad::concat_channels(nx, ny), nz);
}

// Sobel gradient magnitude
Var edge_map(const Var& depth) {
    Var sx = conv_fixed(depth, sobel_x_kernel(), 1, 1);
    Var sy = conv_fixed(depth, sobel_y_kernel(), 1, 1);
    return ad::sqrt(ad::add_const(ad::add(ad::square(sx), ad::square(sy)), 1e-12f));
}

}  // namespace

Var masked_mean(const Var& x, const Tensor& mask) {
    if (mask.c() != 1 || mask.h() != x->value.h() || mask.w() != x->value.w())
        throw ShapeError("mask must be (1,1,H,W) matching the map, got " +
                         mask.shape_str() + " for " + x->value.shape_str());
    const double count = mask.dsum();
    if (count <= 0.0) {
        warn("masked_mean over an empty valid set, returning 0");
        return ad::constant(Tensor::scalar(0.0f));
    }
    Var masked = ad::mul(x, ad::constant(mask));
    const double denom = count * x->value.c();
    return ad::mul_const(ad::sum(masked), static_cast<float>(1.0 / denom));
}

Var ssim(const Var& a, const Var& b) {
    if (!a->value.same_shape(b->value))
        throw ShapeError("ssim inputs differ: " + a->value.shape_str() + " vs " +
                         b->value.shape_str());
    Var mu_a = box3(a);
    Var mu_b = box3(b);
    Var sigma_a = ad::sub(box3(ad::mul(a, a)), ad::mul(mu_a, mu_a));
    Var sigma_b = ad::sub(box3(ad::mul(b, b)), ad::mul(mu_b, mu_b));
    Var cov = ad::sub(box3(ad::mul(a, b)), ad::mul(mu_a, mu_b));

    Var num = ad::mul(ad::add_const(ad::mul_const(ad::mul(mu_a, mu_b), 2.0f), kSsimC1),
                      ad::add_const(ad::mul_const(cov, 2.0f), kSsimC2));
    Var den =
        ad::mul(ad::add_const(ad::add(ad::mul(mu_a, mu_a), ad::mul(mu_b, mu_b)), kSsimC1),
                ad::add_const(ad::add(sigma_a, sigma_b), kSsimC2));
    return ad::div(num, den);
}

Var view_reconstruction_loss(const Var& target, const Var& synthesized,
                             const Tensor& valid_mask, float lambda) {
    if (!target->value.same_shape(synthesized->value))
        throw ShapeError("view loss shapes differ: " + target->value.shape_str() +
                         " vs " + synthesized->value.shape_str());
    const double count = valid_mask.dsum();
    if (count <= 0.0) {
        warn("view_reconstruction_loss: empty valid mask, returning 0");
        return ad::constant(Tensor::scalar(0.0f));
    }
    Var mask_var = ad::constant(valid_mask);
    Var t = ad::mul(target, mask_var);
    Var s = ad::mul(synthesized, mask_var);

    Var l1 = masked_mean(ad::abs(ad::sub(t, s)), valid_mask);
    Var dssim = ad::mul_const(ad::add_const(ad::neg(ssim(t, s)), 1.0f), 0.5f);
    Var structural = masked_mean(dssim, valid_mask);
    return ad::add(ad::mul_const(l1, 1.0f - lambda), ad::mul_const(structural, lambda));
}

Var geometric_consistency_loss(const Var& depth_a, const Var& depth_b,
                               const Tensor& valid_mask) {
    if (!depth_a->value.same_shape(depth_b->value))
        throw ShapeError("geometry loss shapes differ");
    Var diff = ad::div(ad::abs(ad::sub(depth_a, depth_b)), ad::add(depth_a, depth_b));
    return masked_mean(diff, valid_mask);
}

Var boundary_alignment_loss(const Var& pred_depth, const Var& pseudo_depth,
                            float theta, float vartheta) {
    const Tensor& pv = pseudo_depth->value;
    if (!pred_depth->value.same_shape(pv))
        throw ShapeError("boundary loss shapes differ: " +
                         pred_depth->value.shape_str() + " vs " + pv.shape_str());
    const int H = pv.h(), W = pv.w();

    // valid where the full 3x3 stencil has positive pseudo-depth
    Tensor mask(1, 1, H, W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            bool ok = true;
            for (int dy = -1; dy <= 1 && ok; ++dy)
                for (int dx = -1; dx <= 1 && ok; ++dx) {
                    const int yy = std::clamp(y + dy, 0, H - 1);
                    const int xx = std::clamp(x + dx, 0, W - 1);
                    if (pv.at(0, 0, yy, xx) <= 0.0f) ok = false;
                }
            mask.at(0, 0, y, x) = ok ? 1.0f : 0.0f;
        }
    if (mask.dsum() <= 0.0) {
        warn("boundary_alignment_loss: no valid pseudo-depth pixels, returning 0");
        return ad::constant(Tensor::scalar(0.0f));
    }

    Var normal_term =
        masked_mean(ad::abs(ad::sub(normal_map(pred_depth), normal_map(pseudo_depth))), mask);
    Var edge_term =
        masked_mean(ad::abs(ad::sub(edge_map(pred_depth), edge_map(pseudo_depth))), mask);
    return ad::add(ad::mul_const(normal_term, theta), ad::mul_const(edge_term, vartheta));
}

Var semantic_information_loss(const std::array<Var, kPyramidLevels>& student,
                              const std::array<Var, kPyramidLevels>& teacher,
                              bool per_pixel) {
    Var cos_sum;
    for (int i = 0; i < kPyramidLevels; ++i) {
        const Var& s = student[i];
        const Var& t = teacher[i];
        if (!s || !t) throw ShapeError("semantic loss: missing pyramid level");
        if (!s->value.same_shape(t->value))
            throw ShapeError("semantic loss: level " + std::to_string(i + 1) +
                             " shapes differ: " + s->value.shape_str() + " vs " +
                             t->value.shape_str());
        Var cos_i;
        if (per_pixel) {
            Var dot = channel_sum(ad::mul(s, t));
            Var ns = ad::sqrt(ad::add_const(channel_sum(ad::square(s)), 1e-20f));
            Var nt = ad::sqrt(ad::add_const(channel_sum(ad::square(t)), 1e-20f));
            Var cos_map = ad::div(dot, ad::clamp_min(ad::mul(ns, nt), 1e-12f));
            cos_i = ad::mean(cos_map);
        } else {
            Var dot = ad::sum(ad::mul(s, t));
            Var ns = ad::sqrt(ad::sum(ad::square(s)));
            Var nt = ad::sqrt(ad::sum(ad::square(t)));
            if (ad::value0(ns) < 1e-12f || ad::value0(nt) < 1e-12f) {
                warn("semantic_information_loss: zero-norm level " +
                     std::to_string(i + 1) + ", similarity treated as 0");
                cos_i = ad::constant(Tensor::scalar(0.0f));
            } else {
                cos_i = ad::div(dot, ad::mul(ns, nt));
            }
        }
        cos_sum = cos_sum ? ad::add(cos_sum, cos_i) : cos_i;
    }
    return ad::add_const(ad::mul_const(cos_sum, -1.0f / kPyramidLevels), 1.0f);
}

LossBundle stage1_total(const Var& view, const Var& geo, const Var& bnd,
                        const LossWeights& w) {
    w.validate();
    LossBundle b;
    b.stage = 1;
    b.view = ad::value0(view);
    b.geo = ad::value0(geo);
    Var total = ad::add(ad::mul_const(view, w.alpha), ad::mul_const(geo, w.beta));
    double dtotal = w.alpha * b.view + w.beta * b.geo;
    if (bnd) {
        b.bnd = ad::value0(bnd);
        b.bnd_present = true;
        total = ad::add(total, ad::mul_const(bnd, w.gamma));
        dtotal += w.gamma * b.bnd;
    }
    b.total = dtotal;
    b.total_var = total;
    return b;
}

LossBundle stage2_total(const Var& view, const Var& geo, const Var& bnd,
                        const Var& sem, const LossWeights& w) {
    LossBundle b = stage1_total(view, geo, bnd, w);
    b.stage = 2;
    if (sem) {
        b.sem = ad::value0(sem);
        b.sem_present = true;
        b.total_var = ad::add(b.total_var, ad::mul_const(sem, w.epsilon));
        b.total += w.epsilon * b.sem;
    }
    return b;
}

}  // namespace crisp
