#include <doctest.h>

#include <cmath>

#include "crispdepth/data.hpp"
#include "crispdepth/geometry.hpp"
#include "test_util.hpp"

using namespace crisp;
using ad::Var;
using testutil::random_tensor;

namespace {

// smooth test image so bilinear interpolation stays within tolerance
Tensor smooth_image(int c, int h, int w, uint64_t seed) {
    Tensor t(1, c, h, w);
    for (int k = 0; k < c; ++k)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                t.at(0, k, y, x) = static_cast<float>(
                    0.5 + 0.2 * std::sin(0.22 * x + 0.13 * seed + k) *
                              std::cos(0.19 * y - 0.07 * seed));
    return t;
}

double masked_mean_abs_diff(const Tensor& a, const Tensor& b, const Tensor& mask) {
    double s = 0.0;
    int64_t n = 0;
    for (int c = 0; c < a.c(); ++c)
        for (int y = 0; y < a.h(); ++y)
            for (int x = 0; x < a.w(); ++x)
                if (mask.at(0, 0, y, x) != 0.0f) {
                    s += std::fabs(a.at(0, c, y, x) - b.at(0, c, y, x));
                    ++n;
                }
    REQUIRE(n > 0);
    return s / n;
}

}  // namespace

TEST_CASE("backproject: principal ray and the worked example") {
    Intrinsics k{100, 100, 32, 32};
    Tensor depth = Tensor::full(1, 1, 40, 140, 2.0f);
    Tensor pts = backproject(depth, k);
    // principal ray
    CHECK(pts.at(0, 0, 32, 32) == doctest::Approx(0.0));
    CHECK(pts.at(0, 1, 32, 32) == doctest::Approx(0.0));
    CHECK(pts.at(0, 2, 32, 32) == doctest::Approx(2.0));
    // pixel (132,32), fx=fy=100, depth 2 -> (2, 0, 2)
    CHECK(pts.at(0, 0, 32, 132) == doctest::Approx(2.0));
    CHECK(pts.at(0, 1, 32, 132) == doctest::Approx(0.0));
    CHECK(pts.at(0, 2, 32, 132) == doctest::Approx(2.0));
}

TEST_CASE("project is the inverse of backproject on the pixel grid") {
    Intrinsics k{48, 52, 15.5, 16.5};
    Rng rng(3);
    Tensor depth = random_tensor(1, 1, 32, 32, rng, 0.5f, 5.0f);
    Tensor px = project(backproject(depth, k), k);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            CHECK(std::fabs(px.at(0, 0, y, x) - x) < 1e-5);
            CHECK(std::fabs(px.at(0, 1, y, x) - y) < 1e-5);
        }
}

TEST_CASE("identity pose reproduces the source with full validity") {
    Intrinsics k{32, 32, 15.5, 15.5};
    Tensor img = smooth_image(3, 32, 32, 1);
    Tensor depth = Tensor::full(1, 1, 32, 32, 2.0f);
    WarpResult w = warp_image(ad::constant(img), ad::constant(depth),
                              pose_var(Pose6{}), k);
    CHECK(w.valid.dsum() == doctest::Approx(32.0 * 32.0));
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x)
                CHECK(std::fabs(w.synthesized->value.at(0, c, y, x) -
                                img.at(0, c, y, x)) < 1e-4);
}

TEST_CASE("pure x-translation of a constant-depth plane shifts by fx*tx/d") {
    const double fx = 40.0, d = 2.5, tx = 0.1;
    const double shift = fx * tx / d;  // 1.6 px
    Intrinsics k{fx, 40.0, 15.5, 15.5};
    // linear ramp: bilinear sampling is exact on affine images
    Tensor ramp(1, 1, 32, 32);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
            ramp.at(0, 0, y, x) = static_cast<float>(0.01 * x + 0.002 * y);
    Tensor depth = Tensor::full(1, 1, 32, 32, static_cast<float>(d));
    Pose6 pose;
    pose.translation = {tx, 0.0, 0.0};
    WarpResult w =
        warp_image(ad::constant(ramp), ad::constant(depth), pose_var(pose), k);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
            if (w.valid.at(0, 0, y, x) != 0.0f)
                CHECK(std::fabs(w.synthesized->value.at(0, 0, y, x) -
                                (0.01 * (x + shift) + 0.002 * y)) < 1e-4);
    // the shifted-off right edge is masked out
    CHECK(w.valid.dsum() < 32.0 * 32.0);
    CHECK(w.valid.dsum() > 32.0 * 28.0);
}

TEST_CASE("translation beyond the frame masks everything") {
    Intrinsics k{32, 32, 15.5, 15.5};
    Tensor img = smooth_image(3, 32, 32, 2);
    Tensor depth = Tensor::full(1, 1, 32, 32, 2.0f);
    Pose6 pose;
    pose.translation = {50.0, 0.0, 0.0};
    WarpResult w = warp_image(ad::constant(img), ad::constant(depth),
                              pose_var(pose), k);
    CHECK(w.valid.dsum() == 0.0);
}

TEST_CASE("warp_depth: identity, z-translation, and self-consistency") {
    Intrinsics k{32, 32, 15.5, 15.5};
    SUBCASE("identity pose with equal depths") {
        Rng rng(5);
        Tensor depth = random_tensor(1, 1, 32, 32, rng, 1.0f, 3.0f);
        WarpResult w = warp_depth(ad::constant(depth), ad::constant(depth),
                                  pose_var(Pose6{}), k);
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x)
                if (w.valid.at(0, 0, y, x) != 0.0f) {
                    CHECK(std::fabs(w.synthesized->value.at(0, 0, y, x) -
                                    depth.at(0, 0, y, x)) < 1e-3);
                    CHECK(std::fabs(w.computed_depth->value.at(0, 0, y, x) -
                                    depth.at(0, 0, y, x)) < 1e-5);
                }
    }
    SUBCASE("camera advanced by tz sees the plane tz closer") {
        const double d = 3.0, tz = 0.4;
        Tensor target_depth = Tensor::full(1, 1, 32, 32, static_cast<float>(d));
        Tensor source_depth = Tensor::full(1, 1, 32, 32, static_cast<float>(d - tz));
        Pose6 pose;
        pose.translation = {0.0, 0.0, -tz};  // target points sit tz closer in the source frame
        WarpResult w = warp_depth(ad::constant(source_depth), ad::constant(target_depth),
                                  pose_var(pose), k);
        REQUIRE(w.valid.dsum() > 0.0);
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x)
                if (w.valid.at(0, 0, y, x) != 0.0f) {
                    CHECK(w.synthesized->value.at(0, 0, y, x) ==
                          doctest::Approx(d - tz).epsilon(1e-5));
                    CHECK(w.computed_depth->value.at(0, 0, y, x) ==
                          doctest::Approx(d - tz).epsilon(1e-5));
                }
    }
}

TEST_CASE("reprojection agrees with the plain-math route, and valid pixels are sound") {
    Intrinsics k{36, 34, 15.5, 15.5};
    Rng rng(7);
    Tensor depth = random_tensor(1, 1, 32, 32, rng, 1.5f, 4.0f);
    Pose6 pose;
    pose.rotation = {0.02, -0.03, 0.01};
    pose.translation = {0.05, -0.02, 0.04};
    Tensor src = smooth_image(1, 32, 32, 3);
    WarpResult w = warp_image(ad::constant(src), ad::constant(depth),
                              pose_var(pose), k);

    const Mat4 t = pose_to_matrix(pose);
    const Tensor pts = backproject(depth, k);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            const auto q = transform_point(
                t, {pts.at(0, 0, y, x), pts.at(0, 1, y, x), pts.at(0, 2, y, x)});
            if (w.valid.at(0, 0, y, x) != 0.0f) {
                CHECK(q[2] > 0.0);
                const double u = k.fx * q[0] / q[2] + k.cx;
                const double v = k.fy * q[1] / q[2] + k.cy;
                CHECK(u > -1e-3);
                CHECK(u < 31.0 + 1e-3);
                CHECK(v > -1e-3);
                CHECK(v < 31.0 + 1e-3);
                CHECK(std::fabs(w.coord_x->value.at(0, 0, y, x) - u) < 1e-3);
                CHECK(std::fabs(w.coord_y->value.at(0, 0, y, x) - v) < 1e-3);
            }
        }
}

TEST_CASE("inverse warp composition returns to the original") {
    Intrinsics k{40, 40, 19.5, 19.5};
    Tensor img = smooth_image(3, 40, 40, 4);
    Tensor depth = Tensor::full(1, 1, 40, 40, 2.0f);
    Pose6 fwd;
    fwd.translation = {0.06, 0.03, 0.0};
    Pose6 bwd = pose_from_matrix(rigid_inverse(pose_to_matrix(fwd)));

    WarpResult w1 = warp_image(ad::constant(img), ad::constant(depth),
                               pose_var(fwd), k);
    WarpResult w2 = warp_image(w1.synthesized, ad::constant(depth),
                               pose_var(bwd), k);
    Tensor joint(1, 1, 40, 40);
    for (int y = 0; y < 40; ++y)
        for (int x = 0; x < 40; ++x)
            joint.at(0, 0, y, x) =
                w1.valid.at(0, 0, y, x) * w2.valid.at(0, 0, y, x);
    CHECK(masked_mean_abs_diff(w2.synthesized->value, img, joint) < 2.0 / 255.0);
}

TEST_CASE("photometric zero on the rendered scene with exact depth and pose") {
    SceneSpec spec;
    spec.width = spec.height = 32;
    spec.intrinsics = {32, 32, 15.5, 15.5};
    spec.frames = 2;
    spec.seed = 11;
    spec.cam_step = {0.0, 0.05, 0.0};  // lateral motion parallel to the seam
    spec.texture_scale = 1.2;
    spec.texture_amplitude = 0.22;
    spec.texture_octaves = 2;
    SceneObject left, right;
    left.type = SceneObject::Type::kPlane;
    left.corner = {-6.0, -6.0, 2.0};
    left.edge_u = {6.0, 0.0, 0.0};
    left.edge_v = {0.0, 12.0, 0.0};
    right.type = SceneObject::Type::kPlane;
    right.corner = {0.0, -6.0, 3.0};
    right.edge_u = {6.0, 0.0, 0.0};
    right.edge_v = {0.0, 12.0, 0.0};
    spec.objects = {left, right};

    const std::vector<RenderedFrame> frames = render_scene(spec);
    REQUIRE(frames.size() == 2);
    const Pose6 pose = pose_from_matrix(
        mat_mul(rigid_inverse(frames[0].world_from_camera), frames[1].world_from_camera));

    WarpResult w = warp_image(ad::constant(frames[0].image), ad::constant(frames[1].depth),
                              pose_var(pose), spec.intrinsics);
    REQUIRE(w.valid.dsum() > 0.8 * 32 * 32);
    CHECK(masked_mean_abs_diff(w.synthesized->value, frames[1].image, w.valid) <
          2.0 / 255.0);

    WarpResult wd = warp_depth(ad::constant(frames[0].depth), ad::constant(frames[1].depth),
                               pose_var(pose), spec.intrinsics);
    double diff_geo = 0.0;
    int64_t n = 0;
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
            if (wd.valid.at(0, 0, y, x) != 0.0f) {
                const double a = wd.computed_depth->value.at(0, 0, y, x);
                const double b = wd.synthesized->value.at(0, 0, y, x);
                diff_geo += std::fabs(a - b) / (a + b);
                ++n;
            }
    REQUIRE(n > 0);
    CHECK(diff_geo / n < 1e-3);
}
