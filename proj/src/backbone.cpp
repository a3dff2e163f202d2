#include "crispdepth/backbone.hpp"

namespace crisp {

using ad::Var;

void EncoderConfig::validate() const {
    if (input_channels <= 0) throw ConfigError("input_channels must be positive");
    if (paths_per_stage < 1) throw ConfigError("paths_per_stage must be >= 1");
    int stride = 1;
    int prev = 0;
    for (int i = 0; i < kPyramidLevels; ++i) {
        if (stage_channels[i] <= 0) throw ConfigError("stage_channels must be positive");
        if (stage_downsample[i] != 1 && stage_downsample[i] != 2)
            throw ConfigError("stage_downsample entries must be 1 or 2");
        stride *= stage_downsample[i];
        if (stride <= prev)
            throw ConfigError("cumulative strides must be strictly increasing");
        prev = stride;
    }
}

std::array<int, kPyramidLevels> EncoderConfig::strides() const {
    std::array<int, kPyramidLevels> s{};
    int acc = 1;
    for (int i = 0; i < kPyramidLevels; ++i) {
        acc *= stage_downsample[i];
        s[i] = acc;
    }
    return s;
}

int EncoderConfig::total_stride() const { return strides().back(); }

EncoderConfig EncoderConfig::paper_scale() {
    EncoderConfig c;
    c.stage_channels = {64, 96, 176, 216, 216};
    c.paths_per_stage = 3;
    return c;
}

// One pyramid stage: strided embedding conv, parallel dilated conv paths of
// growing receptive field, concat + pointwise aggregation with a residual to
// the embedding, optionally a global channel-attention gate.
struct Encoder::Stage : nn::Module {
    Stage(int in_ch, int out_ch, int downsample, int paths, bool attention, Rng& rng)
        : embed(in_ch, out_ch, 3, downsample, 1, rng),
          embed_norm(out_ch),
          aggregate(out_ch * paths, out_ch, 1, 1, 0, rng),
          out_norm(out_ch) {
        add_child("embed", &embed);
        add_child("embed_norm", &embed_norm);
        for (int j = 0; j < paths; ++j) {
            path_convs.push_back(
                std::make_unique<nn::Conv2d>(out_ch, out_ch, 3, 1, j + 1, rng, j + 1));
            add_child("path" + std::to_string(j), path_convs.back().get());
        }
        add_child("aggregate", &aggregate);
        add_child("out_norm", &out_norm);
        if (attention) {
            const int mid = std::max(out_ch / 4, 4);
            gate_reduce = std::make_unique<nn::Conv2d>(out_ch, mid, 1, 1, 0, rng);
            gate_expand = std::make_unique<nn::Conv2d>(mid, out_ch, 1, 1, 0, rng);
            add_child("gate_reduce", gate_reduce.get());
            add_child("gate_expand", gate_expand.get());
        }
    }

    Var forward(const Var& x) const {
        Var e = ad::gelu(embed_norm.forward(embed.forward(x)));
        Var agg;
        for (const auto& pc : path_convs) {
            Var p = ad::gelu(pc->forward(e));
            agg = agg ? ad::concat_channels(agg, p) : p;
        }
        Var y = ad::add(aggregate.forward(agg), e);
        y = ad::gelu(out_norm.forward(y));
        if (gate_reduce) {
            Var s = ad::global_avg_pool(y);
            s = ad::sigmoid(gate_expand->forward(ad::gelu(gate_reduce->forward(s))));
            y = ad::mul(y, s);
        }
        return y;
    }

    nn::Conv2d embed;
    nn::ChannelNorm embed_norm;
    std::vector<std::unique_ptr<nn::Conv2d>> path_convs;
    nn::Conv2d aggregate;
    nn::ChannelNorm out_norm;
    std::unique_ptr<nn::Conv2d> gate_reduce, gate_expand;
};

Encoder::~Encoder() = default;

Encoder::Encoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    int in_ch = cfg_.input_channels;
    for (int i = 0; i < kPyramidLevels; ++i) {
        stages_.push_back(std::make_unique<Stage>(
            in_ch, cfg_.stage_channels[i], cfg_.stage_downsample[i],
            cfg_.paths_per_stage, cfg_.block_type == BlockType::kAttentionHybrid, rng));
        add_child("stage" + std::to_string(i), stages_.back().get());
        in_ch = cfg_.stage_channels[i];
    }
}

FeaturePyramid Encoder::encode(const Var& image) const {
    const Tensor& v = image->value;
    if (v.n() != 1 || v.c() != cfg_.input_channels)
        throw ShapeError("encoder expects (1," + std::to_string(cfg_.input_channels) +
                         ",H,W), got " + v.shape_str());
    const int ts = cfg_.total_stride();
    if (v.h() % ts != 0 || v.w() % ts != 0)
        throw ShapeError("input " + std::to_string(v.h()) + "x" + std::to_string(v.w()) +
                         " must be divisible by the total stride " + std::to_string(ts));

    FeaturePyramid pyr;
    pyr.strides = cfg_.strides();
    Var x = image;
    for (int i = 0; i < kPyramidLevels; ++i) {
        x = stages_[i]->forward(x);
        pyr.levels[i] = x;
    }
    return pyr;
}

int64_t count_parameters(const nn::Module& m) { return m.parameter_count(true); }

}  // namespace crisp
