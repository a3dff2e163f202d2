#pragma once

#include <array>
#include <memory>
#include <vector>

#include "crispdepth/geometry.hpp"
#include "crispdepth/nn.hpp"

namespace crisp {

struct PoseNetConfig {
    std::array<int, 7> channels{16, 24, 32, 48, 64, 64, 64};
    float output_scale = 0.01f;
};

// Compact egomotion regressor: the two frames are concatenated channel-wise,
// passed through seven stride-2 convs, reduced to six numbers by a pointwise
// conv and global average, and scaled down.
class PoseNet : public nn::Module {
public:
    PoseNet(int frame_channels, const PoseNetConfig& cfg, Rng& rng);

    // frames (1,C,H,W); returns the relative transform frame_b-from-frame_a
    PoseVar estimate(const ad::Var& frame_a, const ad::Var& frame_b) const;
    ad::Var forward_vec(const ad::Var& frame_a, const ad::Var& frame_b) const;

    nn::Conv2d& final_conv() { return *final_; }

private:
    PoseNetConfig cfg_;
    std::vector<std::unique_ptr<nn::Conv2d>> convs_;
    std::unique_ptr<nn::Conv2d> final_;
};

}  // namespace crisp
