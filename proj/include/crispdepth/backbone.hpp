#pragma once

#include <array>
#include <memory>
#include <vector>

#include "crispdepth/nn.hpp"

namespace crisp {

constexpr int kPyramidLevels = 5;

enum class BlockType { kConv, kAttentionHybrid };

// Multi-path pyramid encoder configuration. Five stages; per-stage
// downsample factors multiply to the total stride.
struct EncoderConfig {
    int input_channels = 3;
    std::array<int, kPyramidLevels> stage_channels{24, 32, 40, 40, 40};
    std::array<int, kPyramidLevels> stage_downsample{2, 2, 2, 2, 2};
    int paths_per_stage = 2;
    BlockType block_type = BlockType::kConv;
    uint64_t seed = 0;

    void validate() const;
    std::array<int, kPyramidLevels> strides() const;
    int total_stride() const;

    // Widths comparable to the published full-scale model; used by the
    // parameter audit, not by the desk-scale experiments.
    static EncoderConfig paper_scale();
};

// Five feature maps with strictly increasing strides.
struct FeaturePyramid {
    std::array<ad::Var, kPyramidLevels> levels;
    std::array<int, kPyramidLevels> strides{};

    bool all_finite() const {
        for (const auto& l : levels)
            if (!l->value.all_finite()) return false;
        return true;
    }
};

class Encoder : public nn::Module {
public:
    Encoder(const EncoderConfig& cfg, Rng& rng);
    ~Encoder() override;

    // image (1, input_channels, H, W), H and W divisible by the total stride
    FeaturePyramid encode(const ad::Var& image) const;

    const EncoderConfig& config() const { return cfg_; }

private:
    struct Stage;
    EncoderConfig cfg_;
    std::vector<std::unique_ptr<Stage>> stages_;
};

// Trainable scalar count of a network.
int64_t count_parameters(const nn::Module& m);

}  // namespace crisp
