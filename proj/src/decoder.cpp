#include "crispdepth/decoder.hpp"

#include <cmath>

namespace crisp {

using ad::Var;

void DecoderConfig::validate() const {
    if (expansion_ratio <= 0.0) throw ConfigError("expansion_ratio must be positive");
    if (!(max_depth > min_depth) || min_depth <= 0.0f)
        throw ConfigError("depth range requires max_depth > min_depth > 0");
}

SceBlock::SceBlock(int channels, double expansion_ratio, Rng& rng)
    : dw(channels, channels, 3, 1, 1, rng, 1, channels),
      pw(channels, std::max(1, static_cast<int>(std::lround(channels * expansion_ratio))),
         1, 1, 0, rng),
      proj(std::max(1, static_cast<int>(std::lround(channels * expansion_ratio))),
           channels, 1, 1, 0, rng),
      channels_(channels) {
    add_child("dw", &dw);
    add_child("pw", &pw);
    add_child("proj", &proj);
}

Var SceBlock::forward(const Var& feature) const {
    if (feature->value.c() != channels_)
        throw ShapeError("SCE block expects " + std::to_string(channels_) +
                         " channels, got " + feature->value.shape_str());
    Var hidden = ad::gelu(pw.forward(dw.forward(feature)));
    return ad::add(feature, proj.forward(hidden));
}

FusionStage::FusionStage(int fine_ch, int coarse_ch, bool gelu_after, Rng& rng)
    : fuse_conv(fine_ch + coarse_ch, fine_ch, 3, 1, 1, rng), gelu_after_(gelu_after) {
    add_child("fuse", &fuse_conv);
}

Var FusionStage::forward(const Var& fine, const Var& coarse_upsampled) const {
    if (fine->value.h() != coarse_upsampled->value.h() ||
        fine->value.w() != coarse_upsampled->value.w())
        throw ShapeError("fusion operands disagree after upsampling: " +
                         fine->value.shape_str() + " vs " +
                         coarse_upsampled->value.shape_str());
    Var y = fuse_conv.forward(ad::concat_channels(fine, coarse_upsampled));
    return gelu_after_ ? ad::gelu(y) : y;
}

Var depth_activation(const Var& logits, float min_depth, float max_depth) {
    if (!(max_depth > min_depth) || min_depth <= 0.0f)
        throw ConfigError("depth_activation requires max_depth > min_depth > 0");
    const float dmin = 1.0f / max_depth;
    const float dmax = 1.0f / min_depth;
    Var disparity = ad::add_const(ad::mul_const(ad::sigmoid(logits), dmax - dmin), dmin);
    return ad::div(ad::constant(Tensor::scalar(1.0f)), disparity);
}

Decoder::Decoder(const EncoderConfig& enc_cfg, const DecoderConfig& cfg, Rng& rng)
    : enc_cfg_(enc_cfg), cfg_(cfg) {
    enc_cfg_.validate();
    cfg_.validate();
    for (int i = 0; i < kPyramidLevels; ++i) {
        if (!cfg_.sce_enabled[i]) continue;
        sce_[i] = std::make_unique<SceBlock>(enc_cfg_.stage_channels[i],
                                             cfg_.expansion_ratio, rng);
        add_child("sce" + std::to_string(i + 1), sce_[i].get());
    }
    for (int i = 0; i < kPyramidLevels - 1; ++i) {
        fusion_[i] = std::make_unique<FusionStage>(enc_cfg_.stage_channels[i],
                                                   enc_cfg_.stage_channels[i + 1],
                                                   cfg_.fusion_gelu, rng);
        add_child("fusion" + std::to_string(i + 1), fusion_[i].get());
    }
    head_ = std::make_unique<nn::Conv2d>(enc_cfg_.stage_channels[0], 1, 3, 1, 1, rng);
    // start predictions at the geometric mean of the depth range instead of
    // close to min_depth
    const double d0 = std::sqrt(static_cast<double>(cfg_.min_depth) * cfg_.max_depth);
    const double dmin = 1.0 / cfg_.max_depth, dmax = 1.0 / cfg_.min_depth;
    const double frac = (1.0 / d0 - dmin) / (dmax - dmin);
    head_->bias->value.fill(static_cast<float>(std::log(frac / (1.0 - frac))));
    add_child("head", head_.get());
}

Var Decoder::sce_forward(int level_index, const Var& feature) const {
    if (level_index < 1 || level_index > kPyramidLevels)
        throw ShapeError("SCE level index out of range");
    const auto& block = sce_[level_index - 1];
    return block ? block->forward(feature) : feature;
}

Var Decoder::fuse(int stage_index, const Var& fine, const Var& coarse) const {
    if (stage_index < 1 || stage_index > kPyramidLevels - 1)
        throw ShapeError("fusion stage index out of range");
    const int ratio = enc_cfg_.strides()[stage_index] / enc_cfg_.strides()[stage_index - 1];
    Var up = ratio > 1 ? ad::upsample_nearest(coarse, ratio) : coarse;
    return fusion_[stage_index - 1]->forward(fine, up);
}

DepthPrediction Decoder::decode(const FeaturePyramid& pyramid) const {
    for (int i = 0; i < kPyramidLevels; ++i) {
        if (pyramid.levels[i]->value.c() != enc_cfg_.stage_channels[i])
            throw ShapeError("pyramid level " + std::to_string(i + 1) +
                             " channels do not match decoder config: " +
                             pyramid.levels[i]->value.shape_str());
    }

    DepthPrediction out;
    Var cur = pyramid.levels[kPyramidLevels - 1];
    for (int stage = kPyramidLevels - 1; stage >= 1; --stage) {
        Var fine = sce_forward(stage, pyramid.levels[stage - 1]);
        Var coarse = sce_forward(stage + 1, cur);
        cur = fuse(stage, fine, coarse);
        out.side[stage - 1] = cur;
    }
    const int s1 = enc_cfg_.strides()[0];
    Var full = s1 > 1 ? ad::upsample_nearest(cur, s1) : cur;
    Var logits = head_->forward(full);
    out.depth = depth_activation(logits, cfg_.min_depth, cfg_.max_depth);
    out.min_depth = cfg_.min_depth;
    out.max_depth = cfg_.max_depth;
    return out;
}

DepthNet::DepthNet(const EncoderConfig& enc_cfg, const DecoderConfig& dec_cfg, Rng& rng) {
    encoder_ = std::make_unique<Encoder>(enc_cfg, rng);
    decoder_ = std::make_unique<Decoder>(enc_cfg, dec_cfg, rng);
    add_child("encoder", encoder_.get());
    add_child("decoder", decoder_.get());
}

DepthPrediction DepthNet::predict(const ad::Var& image) const {
    return decoder_->decode(encoder_->encode(image));
}

}  // namespace crisp
