#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "crispdepth/backbone.hpp"
#include "crispdepth/decoder.hpp"
#include "crispdepth/losses.hpp"
#include "crispdepth/posenet.hpp"

namespace crisp {

// Whole-experiment configuration. One structured document; unknown keys are
// rejected everywhere, including in command-line overrides.
struct ExperimentConfig {
    std::string task = "depth";  // "depth" or "teacher"
    int stage = 1;
    uint64_t seed = 0;
    int epochs = 100;
    int64_t max_steps = 0;  // 0: epochs decide
    float learning_rate = 1e-4f;
    int batch_size = 1;
    int image_height = 0, image_width = 0;  // 0: native resolution

    EncoderConfig encoder;
    DecoderConfig decoder;
    PoseNetConfig pose;
    bool pretrained_init = false;
    std::string pretrained_path;

    LossWeights loss;
    bool median_scale_pseudo = true;
    bool semantic_per_pixel = false;

    bool disable_high_level_sce = false;
    bool disable_low_level_sce = false;
    bool semantic_loss_in_stage1 = false;
    bool joint_semantic_decoder = false;
    float joint_seg_weight = 0.1f;

    std::string train_manifest;
    double val_fraction = 0.1;
    int val_interval = 50;
    bool use_next_source = false;

    std::string teacher_checkpoint;
    std::string stage1_checkpoint;

    void validate() const;
    DecoderConfig effective_decoder() const;  // ablation flags applied

    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig from_file(const std::filesystem::path& path,
                                      const std::vector<std::string>& overrides = {});
};

// "a.b.c=value" override applied to an existing key path; the value text is
// parsed as JSON when possible, else taken as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

}  // namespace crisp
