#pragma once

#include <array>

#include "crispdepth/autodiff.hpp"
#include "crispdepth/backbone.hpp"

namespace crisp {

// Training loss weights. Defaults follow the published recipe: SSIM mix
// 0.85, normal/boundary terms 0.1 each, unit stage-1 weights, semantic
// weight 0.01.
struct LossWeights {
    float lambda = 0.85f;
    float theta = 0.1f;
    float vartheta = 0.1f;
    float alpha = 1.0f;
    float beta = 1.0f;
    float gamma = 1.0f;
    float epsilon = 0.01f;

    void validate() const {
        if (lambda < 0 || theta < 0 || vartheta < 0 || alpha < 0 || beta < 0 ||
            gamma < 0 || epsilon < 0)
            throw ConfigError("loss weights must be non-negative");
    }
};

// Named scalar terms plus the recombined stage total. `total` is the exact
// double recombination of the logged terms; `total_var` is the graph node
// used for backprop.
struct LossBundle {
    int stage = 1;
    double view = 0.0;
    double geo = 0.0;
    double bnd = 0.0;
    double sem = 0.0;
    double total = 0.0;
    double joint_seg = 0.0;  // joint-decoder ablation only
    bool bnd_present = false;
    bool sem_present = false;
    bool joint_present = false;
    ad::Var total_var;
};

// Mean of x over mask (broadcast across channels). Empty mask yields a
// constant zero with a warning instead of an error.
ad::Var masked_mean(const ad::Var& x, const Tensor& mask);

// Windowed structural similarity map, 3x3 box windows on reflect-padded
// inputs, stabilizers C1=(0.01)^2 and C2=(0.03)^2. Output has the input
// shape, values in [-1, 1].
ad::Var ssim(const ad::Var& a, const ad::Var& b);

// (1-lambda)*L1 + lambda*(1-SSIM)/2, averaged over the valid set. Inputs are
// zeroed outside the mask before the windowed term so that invalid pixels
// cannot leak into windows.
ad::Var view_reconstruction_loss(const ad::Var& target, const ad::Var& synthesized,
                                 const Tensor& valid_mask, float lambda = 0.85f);

// mean |a - b| / (a + b) over the valid set; both maps positive there
ad::Var geometric_consistency_loss(const ad::Var& depth_a, const ad::Var& depth_b,
                                   const Tensor& valid_mask);

// Normal-map and Sobel-edge agreement against the pseudo-depth label.
// Normals come from central-difference gradients as unit (-dx,-dy,1)
// vectors; boundaries from the 3x3 Sobel magnitude; f is the mean absolute
// difference. Pixels whose 3x3 stencil touches a non-positive pseudo-depth
// value are excluded.
ad::Var boundary_alignment_loss(const ad::Var& pred_depth, const ad::Var& pseudo_depth,
                                float theta = 0.1f, float vartheta = 0.1f);

// One minus the mean per-level cosine similarity between the two pyramids.
// The teacher side must be constant (frozen); a zero-norm level counts as
// similarity 0 with a warning. per_pixel switches to the pixel-wise cosine
// averaged over positions.
ad::Var semantic_information_loss(const std::array<ad::Var, kPyramidLevels>& student,
                                  const std::array<ad::Var, kPyramidLevels>& teacher,
                                  bool per_pixel = false);

// stage totals; bnd/sem may be null when the term is skipped
LossBundle stage1_total(const ad::Var& view, const ad::Var& geo, const ad::Var& bnd,
                        const LossWeights& w);
LossBundle stage2_total(const ad::Var& view, const ad::Var& geo, const ad::Var& bnd,
                        const ad::Var& sem, const LossWeights& w);

}  // namespace crisp
