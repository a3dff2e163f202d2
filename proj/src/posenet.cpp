#include "crispdepth/posenet.hpp"

namespace crisp {

using ad::Var;

PoseNet::PoseNet(int frame_channels, const PoseNetConfig& cfg, Rng& rng) : cfg_(cfg) {
    int in_ch = frame_channels * 2;
    for (size_t i = 0; i < cfg_.channels.size(); ++i) {
        convs_.push_back(std::make_unique<nn::Conv2d>(in_ch, cfg_.channels[i], 3, 2, 1, rng));
        add_child("conv" + std::to_string(i), convs_.back().get());
        in_ch = cfg_.channels[i];
    }
    final_ = std::make_unique<nn::Conv2d>(in_ch, 6, 1, 1, 0, rng);
    add_child("final", final_.get());
}

Var PoseNet::forward_vec(const Var& frame_a, const Var& frame_b) const {
    if (!frame_a->value.same_shape(frame_b->value))
        throw ShapeError("pose frames differ: " + frame_a->value.shape_str() + " vs " +
                         frame_b->value.shape_str());
    Var x = ad::concat_channels(frame_a, frame_b);
    for (const auto& c : convs_) x = ad::gelu(c->forward(x));
    x = final_->forward(x);
    x = ad::global_avg_pool(x);
    return ad::mul_const(x, cfg_.output_scale);
}

PoseVar PoseNet::estimate(const Var& frame_a, const Var& frame_b) const {
    return pose_var_from_vec(forward_vec(frame_a, frame_b));
}

}  // namespace crisp
