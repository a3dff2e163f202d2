#include "crispdepth/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace crisp {

using nlohmann::json;

namespace {

void require_keys(const json& j, const std::set<std::string>& allowed,
                  const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw ConfigError("unknown key \"" + it.key() + "\" in " + where);
}

template <class T, size_t N>
std::array<T, N> array_from(const json& j, const std::string& where) {
    if (!j.is_array() || j.size() != N)
        throw ConfigError(where + " must be an array of " + std::to_string(N));
    std::array<T, N> out;
    for (size_t i = 0; i < N; ++i) out[i] = j[i].get<T>();
    return out;
}

}  // namespace

void ExperimentConfig::validate() const {
    if (task != "depth" && task != "teacher")
        throw ConfigError("task must be \"depth\" or \"teacher\"");
    if (stage != 1 && stage != 2) throw ConfigError("stage must be 1 or 2");
    if (task == "depth" && stage == 2) {
        if (stage1_checkpoint.empty())
            throw ConfigError("stage 2 requires stage1_checkpoint");
        if (teacher_checkpoint.empty())
            throw ConfigError("stage 2 requires teacher_checkpoint");
    }
    if (epochs <= 0 && max_steps <= 0)
        throw ConfigError("need positive epochs or max_steps");
    if (learning_rate <= 0) throw ConfigError("learning_rate must be positive");
    if (batch_size <= 0) throw ConfigError("batch_size must be positive");
    if (val_fraction < 0 || val_fraction >= 1)
        throw ConfigError("val_fraction must lie in [0,1)");
    if (val_interval <= 0) throw ConfigError("val_interval must be positive");
    if (pretrained_init && pretrained_path.empty())
        throw ConfigError("pretrained_init requires pretrained_path");
    encoder.validate();
    effective_decoder().validate();
    loss.validate();
}

DecoderConfig ExperimentConfig::effective_decoder() const {
    DecoderConfig d = decoder;
    if (disable_low_level_sce) d.disable_low_level_sce();
    if (disable_high_level_sce) d.disable_high_level_sce();
    return d;
}

json ExperimentConfig::to_json() const {
    json j;
    j["task"] = task;
    j["stage"] = stage;
    j["seed"] = seed;
    j["epochs"] = epochs;
    j["max_steps"] = max_steps;
    j["learning_rate"] = learning_rate;
    j["batch_size"] = batch_size;
    j["image"] = {{"height", image_height}, {"width", image_width}};
    j["model"] = {
        {"encoder",
         {{"input_channels", encoder.input_channels},
          {"stage_channels", encoder.stage_channels},
          {"stage_downsample", encoder.stage_downsample},
          {"paths_per_stage", encoder.paths_per_stage},
          {"block_type",
           encoder.block_type == BlockType::kConv ? "conv" : "attention-hybrid"}}},
        {"decoder",
         {{"expansion_ratio", decoder.expansion_ratio},
          {"fusion_gelu", decoder.fusion_gelu},
          {"min_depth", decoder.min_depth},
          {"max_depth", decoder.max_depth}}},
        {"pose",
         {{"channels", std::vector<int>(pose.channels.begin(), pose.channels.end())},
          {"output_scale", pose.output_scale}}},
        {"pretrained_init", pretrained_init},
        {"pretrained_path", pretrained_path}};
    j["loss"] = {{"lambda", loss.lambda},
                 {"theta", loss.theta},
                 {"vartheta", loss.vartheta},
                 {"alpha", loss.alpha},
                 {"beta", loss.beta},
                 {"gamma", loss.gamma},
                 {"epsilon", loss.epsilon},
                 {"median_scale_pseudo", median_scale_pseudo},
                 {"semantic_per_pixel", semantic_per_pixel}};
    j["ablation"] = {{"disable_high_level_sce", disable_high_level_sce},
                     {"disable_low_level_sce", disable_low_level_sce},
                     {"semantic_loss_in_stage1", semantic_loss_in_stage1},
                     {"joint_semantic_decoder", joint_semantic_decoder},
                     {"joint_seg_weight", joint_seg_weight}};
    j["data"] = {{"train_manifest", train_manifest},
                 {"val_fraction", val_fraction},
                 {"val_interval", val_interval},
                 {"use_next_source", use_next_source}};
    j["teacher_checkpoint"] = teacher_checkpoint;
    j["stage1_checkpoint"] = stage1_checkpoint;
    return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    require_keys(j,
                 {"task", "stage", "seed", "epochs", "max_steps", "learning_rate",
                  "batch_size", "image", "model", "loss", "ablation", "data",
                  "teacher_checkpoint", "stage1_checkpoint"},
                 "config");
    ExperimentConfig c;
    if (j.count("task")) c.task = j["task"].get<std::string>();
    if (j.count("stage")) c.stage = j["stage"].get<int>();
    if (j.count("seed")) c.seed = j["seed"].get<uint64_t>();
    if (j.count("epochs")) c.epochs = j["epochs"].get<int>();
    if (j.count("max_steps")) c.max_steps = j["max_steps"].get<int64_t>();
    if (j.count("learning_rate")) c.learning_rate = j["learning_rate"].get<float>();
    if (j.count("batch_size")) c.batch_size = j["batch_size"].get<int>();
    if (j.count("image")) {
        require_keys(j["image"], {"height", "width"}, "image");
        if (j["image"].count("height")) c.image_height = j["image"]["height"].get<int>();
        if (j["image"].count("width")) c.image_width = j["image"]["width"].get<int>();
    }
    if (j.count("model")) {
        const json& m = j["model"];
        require_keys(m, {"encoder", "decoder", "pose", "pretrained_init", "pretrained_path"},
                     "model");
        if (m.count("encoder")) {
            const json& e = m["encoder"];
            require_keys(e,
                         {"input_channels", "stage_channels", "stage_downsample",
                          "paths_per_stage", "block_type"},
                         "model.encoder");
            if (e.count("input_channels"))
                c.encoder.input_channels = e["input_channels"].get<int>();
            if (e.count("stage_channels"))
                c.encoder.stage_channels =
                    array_from<int, kPyramidLevels>(e["stage_channels"], "stage_channels");
            if (e.count("stage_downsample"))
                c.encoder.stage_downsample = array_from<int, kPyramidLevels>(
                    e["stage_downsample"], "stage_downsample");
            if (e.count("paths_per_stage"))
                c.encoder.paths_per_stage = e["paths_per_stage"].get<int>();
            if (e.count("block_type")) {
                const std::string b = e["block_type"].get<std::string>();
                if (b == "conv")
                    c.encoder.block_type = BlockType::kConv;
                else if (b == "attention-hybrid")
                    c.encoder.block_type = BlockType::kAttentionHybrid;
                else
                    throw ConfigError("block_type must be conv or attention-hybrid");
            }
        }
        if (m.count("decoder")) {
            const json& d = m["decoder"];
            require_keys(d, {"expansion_ratio", "fusion_gelu", "min_depth", "max_depth"},
                         "model.decoder");
            if (d.count("expansion_ratio"))
                c.decoder.expansion_ratio = d["expansion_ratio"].get<double>();
            if (d.count("fusion_gelu")) c.decoder.fusion_gelu = d["fusion_gelu"].get<bool>();
            if (d.count("min_depth")) c.decoder.min_depth = d["min_depth"].get<float>();
            if (d.count("max_depth")) c.decoder.max_depth = d["max_depth"].get<float>();
        }
        if (m.count("pose")) {
            const json& p = m["pose"];
            require_keys(p, {"channels", "output_scale"}, "model.pose");
            if (p.count("channels"))
                c.pose.channels = array_from<int, 7>(p["channels"], "pose.channels");
            if (p.count("output_scale"))
                c.pose.output_scale = p["output_scale"].get<float>();
        }
        if (m.count("pretrained_init")) c.pretrained_init = m["pretrained_init"].get<bool>();
        if (m.count("pretrained_path"))
            c.pretrained_path = m["pretrained_path"].get<std::string>();
    }
    if (j.count("loss")) {
        const json& l = j["loss"];
        require_keys(l,
                     {"lambda", "theta", "vartheta", "alpha", "beta", "gamma", "epsilon",
                      "median_scale_pseudo", "semantic_per_pixel"},
                     "loss");
        if (l.count("lambda")) c.loss.lambda = l["lambda"].get<float>();
        if (l.count("theta")) c.loss.theta = l["theta"].get<float>();
        if (l.count("vartheta")) c.loss.vartheta = l["vartheta"].get<float>();
        if (l.count("alpha")) c.loss.alpha = l["alpha"].get<float>();
        if (l.count("beta")) c.loss.beta = l["beta"].get<float>();
        if (l.count("gamma")) c.loss.gamma = l["gamma"].get<float>();
        if (l.count("epsilon")) c.loss.epsilon = l["epsilon"].get<float>();
        if (l.count("median_scale_pseudo"))
            c.median_scale_pseudo = l["median_scale_pseudo"].get<bool>();
        if (l.count("semantic_per_pixel"))
            c.semantic_per_pixel = l["semantic_per_pixel"].get<bool>();
    }
    if (j.count("ablation")) {
        const json& a = j["ablation"];
        require_keys(a,
                     {"disable_high_level_sce", "disable_low_level_sce",
                      "semantic_loss_in_stage1", "joint_semantic_decoder",
                      "joint_seg_weight"},
                     "ablation");
        if (a.count("disable_high_level_sce"))
            c.disable_high_level_sce = a["disable_high_level_sce"].get<bool>();
        if (a.count("disable_low_level_sce"))
            c.disable_low_level_sce = a["disable_low_level_sce"].get<bool>();
        if (a.count("semantic_loss_in_stage1"))
            c.semantic_loss_in_stage1 = a["semantic_loss_in_stage1"].get<bool>();
        if (a.count("joint_semantic_decoder"))
            c.joint_semantic_decoder = a["joint_semantic_decoder"].get<bool>();
        if (a.count("joint_seg_weight"))
            c.joint_seg_weight = a["joint_seg_weight"].get<float>();
    }
    if (j.count("data")) {
        const json& d = j["data"];
        require_keys(d, {"train_manifest", "val_fraction", "val_interval", "use_next_source"},
                     "data");
        if (d.count("train_manifest"))
            c.train_manifest = d["train_manifest"].get<std::string>();
        if (d.count("val_fraction")) c.val_fraction = d["val_fraction"].get<double>();
        if (d.count("val_interval")) c.val_interval = d["val_interval"].get<int>();
        if (d.count("use_next_source"))
            c.use_next_source = d["use_next_source"].get<bool>();
    }
    if (j.count("teacher_checkpoint"))
        c.teacher_checkpoint = j["teacher_checkpoint"].get<std::string>();
    if (j.count("stage1_checkpoint"))
        c.stage1_checkpoint = j["stage1_checkpoint"].get<std::string>();
    c.validate();
    return c;
}

void apply_override(json& doc, const std::string& assignment) {
    const size_t eq = assignment.find('=');
    if (eq == std::string::npos)
        throw ConfigError("override must look like key.path=value: " + assignment);
    const std::string path = assignment.substr(0, eq);
    const std::string value_text = assignment.substr(eq + 1);

    std::vector<std::string> keys;
    std::stringstream ss(path);
    std::string part;
    while (std::getline(ss, part, '.')) keys.push_back(part);
    if (keys.empty()) throw ConfigError("empty override key");

    json* node = &doc;
    for (size_t i = 0; i + 1 < keys.size(); ++i) {
        if (!node->contains(keys[i]))
            throw ConfigError("unknown override key \"" + path + "\"");
        node = &(*node)[keys[i]];
    }
    if (!node->contains(keys.back()))
        throw ConfigError("unknown override key \"" + path + "\"");

    json value;
    try {
        value = json::parse(value_text);
    } catch (const json::exception&) {
        value = value_text;  // plain string
    }
    (*node)[keys.back()] = value;
}

ExperimentConfig ExperimentConfig::from_file(const std::filesystem::path& path,
                                             const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    // Overrides must address the full schema, so fill defaults first. Unknown
    // keys in the user document survive the merge and are rejected by
    // from_json below.
    json merged = ExperimentConfig().to_json();
    merged.merge_patch(j);
    for (const std::string& o : overrides) apply_override(merged, o);
    return from_json(merged);
}

}  // namespace crisp
