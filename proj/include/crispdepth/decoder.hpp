#pragma once

#include <array>
#include <memory>

#include "crispdepth/backbone.hpp"

namespace crisp {

// Channel-enhancement / fusion decoder configuration. SCE blocks can be
// dropped per level for the ablation variants (dropped = identity, and the
// block's parameters are not constructed).
struct DecoderConfig {
    double expansion_ratio = 4.0;
    std::array<bool, kPyramidLevels> sce_enabled{true, true, true, true, true};
    bool fusion_gelu = true;
    float min_depth = 0.1f;
    float max_depth = 10.0f;

    void validate() const;

    // levels 1..3 carry the low-level enhancement branches, 4..5 the
    // high-level ones
    void disable_low_level_sce() { sce_enabled[0] = sce_enabled[1] = sce_enabled[2] = false; }
    void disable_high_level_sce() { sce_enabled[3] = sce_enabled[4] = false; }
    void disable_all_sce() { sce_enabled.fill(false); }
};

// Residual channel enhancement: depthwise 3x3, pointwise expansion with GELU,
// pointwise projection back, added to the input. Input and output shapes are
// identical; per-level blocks never share weights.
class SceBlock : public nn::Module {
public:
    SceBlock(int channels, double expansion_ratio, Rng& rng);
    ad::Var forward(const ad::Var& feature) const;

    int channels() const { return channels_; }

    nn::Conv2d dw;
    nn::Conv2d pw;
    nn::Conv2d proj;

private:
    int channels_;
};

// Pairwise fusion: coarse operand is upsampled to the fine resolution,
// concatenated, and reduced back to the fine width by a 3x3 conv.
class FusionStage : public nn::Module {
public:
    FusionStage(int fine_ch, int coarse_ch, bool gelu_after, Rng& rng);
    ad::Var forward(const ad::Var& fine, const ad::Var& coarse_upsampled) const;

    nn::Conv2d fuse_conv;

private:
    bool gelu_after_;
};

// logits -> depth in (min_depth, max_depth) via inverse-disparity squashing
ad::Var depth_activation(const ad::Var& logits, float min_depth, float max_depth);

struct DepthPrediction {
    ad::Var depth;                                 // (1,1,H,W), strictly positive
    std::array<ad::Var, kPyramidLevels - 1> side;  // per-stage fused features
    float min_depth = 0.0f;
    float max_depth = 0.0f;
};

class Decoder : public nn::Module {
public:
    Decoder(const EncoderConfig& enc_cfg, const DecoderConfig& cfg, Rng& rng);

    DepthPrediction decode(const FeaturePyramid& pyramid) const;

    // level_index is 1-based to match the pyramid numbering
    ad::Var sce_forward(int level_index, const ad::Var& feature) const;
    ad::Var fuse(int stage_index, const ad::Var& fine, const ad::Var& coarse) const;

    const DecoderConfig& config() const { return cfg_; }
    const SceBlock* sce_block(int level_index) const {
        return sce_[level_index - 1].get();
    }

private:
    EncoderConfig enc_cfg_;
    DecoderConfig cfg_;
    std::array<std::unique_ptr<SceBlock>, kPyramidLevels> sce_;
    std::array<std::unique_ptr<FusionStage>, kPyramidLevels - 1> fusion_;
    std::unique_ptr<nn::Conv2d> head_;
};

// Full depth network: pyramid encoder plus fusion decoder.
class DepthNet : public nn::Module {
public:
    DepthNet(const EncoderConfig& enc_cfg, const DecoderConfig& dec_cfg, Rng& rng);

    DepthPrediction predict(const ad::Var& image) const;
    FeaturePyramid encode(const ad::Var& image) const { return encoder_->encode(image); }

    Encoder& encoder() { return *encoder_; }
    Decoder& decoder() { return *decoder_; }
    const Encoder& encoder() const { return *encoder_; }
    const Decoder& decoder() const { return *decoder_; }

private:
    std::unique_ptr<Encoder> encoder_;
    std::unique_ptr<Decoder> decoder_;
};

}  // namespace crisp
