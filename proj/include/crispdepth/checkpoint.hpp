#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "crispdepth/tensor.hpp"

namespace crisp {

// Single-file archive: magic, JSON header (config snapshot, stage/step/RNG
// state, tensor table), then raw little-endian float payloads in table
// order, optionally followed by the optimizer moments. Weight payloads
// round-trip byte-identically.
struct CheckpointData {
    nlohmann::json config;
    std::string task = "depth";
    int stage = 1;
    int64_t step = 0;
    std::string rng_state;
    std::vector<std::pair<std::string, Tensor>> tensors;
    bool has_adam = false;
    int64_t adam_step = 0;
    std::vector<Tensor> adam_m, adam_v;
};

void save_checkpoint(const std::filesystem::path& path, const CheckpointData& ckpt);
CheckpointData load_checkpoint(const std::filesystem::path& path);

}  // namespace crisp
