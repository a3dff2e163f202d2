#include "crispdepth/geometry.hpp"

#include <cmath>

namespace crisp {

using ad::Var;

Mat4 Mat4::identity() {
    Mat4 t;
    t.m = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
    return t;
}

Mat4 pose_to_matrix(const Pose6& pose) {
    const double rx = pose.rotation[0], ry = pose.rotation[1], rz = pose.rotation[2];
    const double theta2 = rx * rx + ry * ry + rz * rz;
    double a, b;  // sin(t)/t and (1-cos(t))/t^2, series expanded near zero
    if (theta2 < 1e-12) {
        a = 1.0 - theta2 / 6.0;
        b = 0.5 - theta2 / 24.0;
    } else {
        const double theta = std::sqrt(theta2);
        a = std::sin(theta) / theta;
        b = (1.0 - std::cos(theta)) / theta2;
    }
    Mat4 t = Mat4::identity();
    const double k[9] = {0, -rz, ry, rz, 0, -rx, -ry, rx, 0};
    const double r[3] = {rx, ry, rz};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            const double eye = i == j ? 1.0 : 0.0;
            t.at(i, j) = eye + a * k[i * 3 + j] + b * (r[i] * r[j] - eye * theta2);
        }
    t.at(0, 3) = pose.translation[0];
    t.at(1, 3) = pose.translation[1];
    t.at(2, 3) = pose.translation[2];
    return t;
}

Pose6 pose_from_matrix(const Mat4& mat) {
    Pose6 p;
    p.translation = {mat.at(0, 3), mat.at(1, 3), mat.at(2, 3)};
    const double tr = mat.at(0, 0) + mat.at(1, 1) + mat.at(2, 2);
    const double c = std::clamp((tr - 1.0) / 2.0, -1.0, 1.0);
    const double theta = std::acos(c);
    const double ax = mat.at(2, 1) - mat.at(1, 2);
    const double ay = mat.at(0, 2) - mat.at(2, 0);
    const double az = mat.at(1, 0) - mat.at(0, 1);
    if (theta < 1e-7) {
        p.rotation = {0.5 * ax, 0.5 * ay, 0.5 * az};
    } else {
        const double s = theta / (2.0 * std::sin(theta));
        p.rotation = {s * ax, s * ay, s * az};
    }
    return p;
}

Mat4 mat_mul(const Mat4& a, const Mat4& b) {
    Mat4 out;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            double s = 0.0;
            for (int k = 0; k < 4; ++k) s += a.at(i, k) * b.at(k, j);
            out.at(i, j) = s;
        }
    return out;
}

Mat4 rigid_inverse(const Mat4& t) {
    Mat4 out = Mat4::identity();
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) out.at(i, j) = t.at(j, i);
    for (int i = 0; i < 3; ++i) {
        double s = 0.0;
        for (int j = 0; j < 3; ++j) s += t.at(j, i) * t.at(j, 3);
        out.at(i, 3) = -s;
    }
    return out;
}

std::array<double, 3> transform_point(const Mat4& t, const std::array<double, 3>& p) {
    std::array<double, 3> q;
    for (int i = 0; i < 3; ++i)
        q[i] = t.at(i, 0) * p[0] + t.at(i, 1) * p[1] + t.at(i, 2) * p[2] + t.at(i, 3);
    return q;
}

PoseVar pose_var(const Pose6& pose, bool requires_grad) {
    Tensor r(1, 3, 1, 1), t(1, 3, 1, 1);
    for (int i = 0; i < 3; ++i) {
        r.data()[i] = static_cast<float>(pose.rotation[i]);
        t.data()[i] = static_cast<float>(pose.translation[i]);
    }
    return PoseVar{ad::leaf(std::move(r), requires_grad),
                   ad::leaf(std::move(t), requires_grad)};
}

PoseVar pose_var_from_vec(const Var& six) {
    if (six->value.c() != 6 || six->value.h() != 1 || six->value.w() != 1)
        throw ShapeError("pose vector must be (1,6,1,1), got " + six->value.shape_str());
    return PoseVar{ad::slice_channels(six, 0, 3), ad::slice_channels(six, 3, 6)};
}

Pose6 pose_values(const PoseVar& p) {
    Pose6 out;
    for (int i = 0; i < 3; ++i) {
        out.rotation[i] = p.rotation->value.data()[i];
        out.translation[i] = p.translation->value.data()[i];
    }
    return out;
}

std::array<Var, 9> rotation_from_axis_angle(const Var& rot3) {
    if (rot3->value.c() != 3)
        throw ShapeError("axis-angle must have 3 channels");
    std::array<Var, 3> r;
    for (int i = 0; i < 3; ++i) r[i] = ad::slice_channels(rot3, i, i + 1);
    Var theta2 = ad::add(ad::add(ad::square(r[0]), ad::square(r[1])), ad::square(r[2]));

    Var a, b;
    if (ad::value0(theta2) < 1e-8f) {
        a = ad::add_const(ad::mul_const(theta2, -1.0f / 6.0f), 1.0f);
        b = ad::add_const(ad::mul_const(theta2, -1.0f / 24.0f), 0.5f);
    } else {
        Var theta = ad::sqrt(theta2);
        a = ad::div(ad::sin(theta), theta);
        b = ad::div(ad::add_const(ad::neg(ad::cos(theta)), 1.0f), theta2);
    }

    Var zero = ad::constant(Tensor::scalar(0.0f));
    // skew(r), row-major
    std::array<Var, 9> k = {zero,           ad::neg(r[2]), r[1],
                            r[2],           zero,          ad::neg(r[0]),
                            ad::neg(r[1]),  r[0],          zero};
    std::array<Var, 9> out;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            // R = I + a*K + b*K^2 with K^2 = r r^T - theta^2 I
            Var ksq = ad::mul(r[i], r[j]);
            if (i == j) ksq = ad::sub(ksq, theta2);
            Var v = ad::add(ad::mul(a, k[i * 3 + j]), ad::mul(b, ksq));
            if (i == j) v = ad::add_const(v, 1.0f);
            out[i * 3 + j] = v;
        }
    return out;
}

Tensor backproject(const Tensor& depth, const Intrinsics& K) {
    K.validate();
    if (depth.c() != 1) throw ShapeError("backproject expects (1,1,H,W) depth");
    const int H = depth.h(), W = depth.w();
    Tensor pts(1, 3, H, W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const double d = depth.at(0, 0, y, x);
            pts.at(0, 0, y, x) = static_cast<float>((x - K.cx) * d / K.fx);
            pts.at(0, 1, y, x) = static_cast<float>((y - K.cy) * d / K.fy);
            pts.at(0, 2, y, x) = static_cast<float>(d);
        }
    return pts;
}

Tensor project(const Tensor& points, const Intrinsics& K) {
    K.validate();
    if (points.c() != 3) throw ShapeError("project expects (1,3,H,W) points");
    const int H = points.h(), W = points.w();
    Tensor px(1, 2, H, W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const double z = points.at(0, 2, y, x);
            if (z <= 0.0) {
                px.at(0, 0, y, x) = -1.0f;
                px.at(0, 1, y, x) = -1.0f;
                continue;
            }
            px.at(0, 0, y, x) = static_cast<float>(K.fx * points.at(0, 0, y, x) / z + K.cx);
            px.at(0, 1, y, x) = static_cast<float>(K.fy * points.at(0, 1, y, x) / z + K.cy);
        }
    return px;
}

namespace {

constexpr float kMinZ = 1e-4f;
constexpr float kEdgeTol = 1e-4f;

struct Reprojection {
    Var sx, sy;    // source pixel coordinates (1,1,H,W)
    Var zs;        // z after the rigid transform
    Tensor valid;  // inside frame with positive depth
};

// backproject target depth, rigidly transform, project into the source frame
Reprojection reproject(const Var& target_depth, const PoseVar& pose,
                       const Intrinsics& K, int src_w, int src_h) {
    K.validate();
    const Tensor& dv = target_depth->value;
    if (dv.c() != 1) throw ShapeError("target depth must be (1,1,H,W)");
    const int H = dv.h(), W = dv.w();

    // normalized-ray constants
    Tensor xn(1, 1, H, W), yn(1, 1, H, W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            xn.at(0, 0, y, x) = static_cast<float>((x - K.cx) / K.fx);
            yn.at(0, 0, y, x) = static_cast<float>((y - K.cy) / K.fy);
        }
    Var X = ad::mul(ad::constant(std::move(xn)), target_depth);
    Var Y = ad::mul(ad::constant(std::move(yn)), target_depth);
    const Var& Z = target_depth;

    auto R = rotation_from_axis_angle(pose.rotation);
    Var tx = ad::slice_channels(pose.translation, 0, 1);
    Var ty = ad::slice_channels(pose.translation, 1, 2);
    Var tz = ad::slice_channels(pose.translation, 2, 3);

    auto row = [&](int i, const Var& t) {
        return ad::add(ad::add(ad::mul(R[i * 3 + 0], X), ad::mul(R[i * 3 + 1], Y)),
                       ad::add(ad::mul(R[i * 3 + 2], Z), t));
    };
    Var Xs = row(0, tx);
    Var Ys = row(1, ty);
    Var Zs = row(2, tz);

    Var zsafe = ad::clamp_min(Zs, kMinZ);
    Var sx = ad::add_const(ad::mul_const(ad::div(Xs, zsafe), static_cast<float>(K.fx)),
                           static_cast<float>(K.cx));
    Var sy = ad::add_const(ad::mul_const(ad::div(Ys, zsafe), static_cast<float>(K.fy)),
                           static_cast<float>(K.cy));

    Tensor valid(1, 1, H, W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const float z = Zs->value.at(0, 0, y, x);
            const float u = sx->value.at(0, 0, y, x);
            const float v = sy->value.at(0, 0, y, x);
            const bool ok = z > kMinZ && u >= -kEdgeTol &&
                            u <= static_cast<float>(src_w - 1) + kEdgeTol &&
                            v >= -kEdgeTol &&
                            v <= static_cast<float>(src_h - 1) + kEdgeTol;
            valid.at(0, 0, y, x) = ok ? 1.0f : 0.0f;
        }
    return Reprojection{sx, sy, Zs, std::move(valid)};
}

}  // namespace

WarpResult warp_image(const Var& source, const Var& target_depth,
                      const PoseVar& pose, const Intrinsics& K) {
    const Tensor& sv = source->value;
    Reprojection rp = reproject(target_depth, pose, K, sv.w(), sv.h());
    WarpResult out;
    out.synthesized = ad::bilinear_sample(source, rp.sx, rp.sy);
    out.valid = std::move(rp.valid);
    out.coord_x = rp.sx;
    out.coord_y = rp.sy;
    return out;
}

WarpResult warp_depth(const Var& source_depth, const Var& target_depth,
                      const PoseVar& pose, const Intrinsics& K) {
    const Tensor& sv = source_depth->value;
    if (sv.c() != 1) throw ShapeError("source depth must be (1,1,H,W)");
    Reprojection rp = reproject(target_depth, pose, K, sv.w(), sv.h());
    WarpResult out;
    out.synthesized = ad::bilinear_sample(source_depth, rp.sx, rp.sy);
    out.computed_depth = rp.zs;
    out.valid = std::move(rp.valid);
    out.coord_x = rp.sx;
    out.coord_y = rp.sy;
    // sampled source depth must itself be positive to compare
    const Tensor& samp = out.synthesized->value;
    for (int y = 0; y < out.valid.h(); ++y)
        for (int x = 0; x < out.valid.w(); ++x)
            if (samp.at(0, 0, y, x) <= kMinZ) out.valid.at(0, 0, y, x) = 0.0f;
    return out;
}

}  // namespace crisp
