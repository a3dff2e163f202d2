#pragma once

#include <array>

#include "crispdepth/autodiff.hpp"

namespace crisp {

// Pinhole intrinsics, pixel units. Convention used throughout: pixel centers
// at integer coordinates, origin top-left, +z camera-forward.
struct Intrinsics {
    double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;

    void validate() const {
        if (fx <= 0.0 || fy <= 0.0) throw ConfigError("intrinsics need fx, fy > 0");
    }
    Intrinsics scaled(double sx, double sy) const {
        return Intrinsics{fx * sx, fy * sy, cx * sx, cy * sy};
    }
};

// 6-DoF relative camera transform: axis-angle rotation (radians) and
// translation (meters). Maps target-camera coordinates to source-camera
// coordinates when used for warping.
struct Pose6 {
    std::array<double, 3> rotation{0.0, 0.0, 0.0};
    std::array<double, 3> translation{0.0, 0.0, 0.0};
};

// Row-major homogeneous 4x4 rigid transform.
struct Mat4 {
    std::array<double, 16> m{};
    static Mat4 identity();
    double at(int r, int c) const { return m[r * 4 + c]; }
    double& at(int r, int c) { return m[r * 4 + c]; }
};

Mat4 pose_to_matrix(const Pose6& pose);
Pose6 pose_from_matrix(const Mat4& mat);
Mat4 mat_mul(const Mat4& a, const Mat4& b);
Mat4 rigid_inverse(const Mat4& t);
std::array<double, 3> transform_point(const Mat4& t, const std::array<double, 3>& p);

// graph-side pose: (1,3,1,1) rotation and translation vars
struct PoseVar {
    ad::Var rotation;
    ad::Var translation;
};

PoseVar pose_var(const Pose6& pose, bool requires_grad = false);
// split a (1,6,1,1) network output into rotation/translation
PoseVar pose_var_from_vec(const ad::Var& six);
Pose6 pose_values(const PoseVar& p);

// Rodrigues rotation as nine scalar graph nodes, row-major.
std::array<ad::Var, 9> rotation_from_axis_angle(const ad::Var& rot3);

// Pixel at (u,v) with depth d lifts to ((u-cx)d/fx, (v-cy)d/fy, d).
// depth (1,1,H,W) -> points (1,3,H,W)
Tensor backproject(const Tensor& depth, const Intrinsics& K);
// points (1,3,H,W) -> pixel coords (1,2,H,W); z<=0 projects to (-1,-1)
Tensor project(const Tensor& points, const Intrinsics& K);

struct WarpResult {
    ad::Var synthesized;      // sampled source image or source depth
    ad::Var computed_depth;   // depth warps only: z of the transformed prediction
    Tensor valid;             // (1,1,H,W) 1 where the reprojection is usable
    ad::Var coord_x, coord_y; // reprojected source pixel coordinates
};

// Synthesizes the target view by sampling `source` at the reprojection of
// `target_depth` through `pose` (target->source). Differentiable w.r.t.
// depth, pose and source; invalid pixels are masked, never thrown.
WarpResult warp_image(const ad::Var& source, const ad::Var& target_depth,
                      const PoseVar& pose, const Intrinsics& K);

// Samples the source depth at the reprojected coordinates and also returns
// the computed z of the transformed prediction, both expressed in the source
// camera frame on the target pixel grid, so the two are directly comparable.
WarpResult warp_depth(const ad::Var& source_depth, const ad::Var& target_depth,
                      const PoseVar& pose, const Intrinsics& K);

}  // namespace crisp
