#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "crispdepth/geometry.hpp"
#include "crispdepth/tensor.hpp"

namespace crisp {

// One training sample: target frame, adjacent source frame(s), intrinsics,
// and whatever labels the manifest carries. Empty tensors mean "absent".
struct SampleTriplet {
    std::string name;
    Tensor target;                 // (1,3,H,W) in [0,1]
    std::vector<Tensor> sources;   // same shape as target
    Intrinsics intrinsics;
    Tensor pseudo_depth;           // (1,1,H,W) meters, zeros invalid
    Tensor gt_depth;               // (1,1,H,W) meters, zeros invalid
    Tensor seg_mask;               // (1,1,H,W) object ids, 0 = none
    std::vector<Pose6> gt_pose_to_source;  // synthetic only

    bool has_pseudo_depth() const { return !pseudo_depth.empty(); }
    bool has_gt_depth() const { return !gt_depth.empty(); }
    bool has_seg_mask() const { return !seg_mask.empty(); }
    bool has_gt_poses() const { return !gt_pose_to_source.empty(); }
};

struct SceneObject {
    enum class Type { kPlane, kBox };
    Type type = Type::kPlane;
    // plane rectangle: corner plus two edge vectors spanning it
    std::array<double, 3> corner{}, edge_u{}, edge_v{};
    // axis-aligned box: center and half extents
    std::array<double, 3> center{}, half{};
};

// Textured plane/box scene observed by a camera sliding along a fixed step.
struct SceneSpec {
    int width = 64, height = 64;
    Intrinsics intrinsics{64.0, 64.0, 31.5, 31.5};
    uint64_t seed = 0;
    int frames = 3;
    double noise_level = 0.0;
    std::array<double, 3> cam_start{0, 0, 0};
    std::array<double, 3> cam_step{0, 0, 0};
    std::array<double, 3> cam_rot_step{0, 0, 0};
    double min_depth = 0.1, max_depth = 10.0;
    int texture_octaves = 2;
    double texture_scale = 1.0;      // base feature wavelength on the surface, meters
    double texture_amplitude = 0.25;
    bool emit_pseudo_depth = true;
    bool use_next_source = false;
    std::vector<SceneObject> objects;

    void validate() const;
};

SceneSpec scene_spec_from_json_file(const std::filesystem::path& path);
SceneSpec scene_spec_from_json_text(const std::string& text);

struct RenderedFrame {
    Tensor image;  // (1,3,H,W)
    Tensor depth;  // (1,1,H,W) exact, zeros where no surface
    Tensor seg;    // (1,1,H,W) object ids, 0 = background
    Mat4 world_from_camera;
};

// Exact ray-cast rendering; deterministic given the seed. Throws if a camera
// sits inside geometry, sees no surface, or a hit leaves the depth range.
std::vector<RenderedFrame> render_scene(const SceneSpec& spec);

// Consecutive-frame triplets with exact depth, masks and relative poses.
std::vector<SampleTriplet> generate_synthetic_sequence(const SceneSpec& spec);

// Renders and writes frames/depths/masks plus manifest.jsonl; returns the
// manifest path. Validation happens before the first file is written.
std::filesystem::path write_synthetic_dataset(const SceneSpec& spec,
                                              const std::filesystem::path& out_dir);

// 16-bit grayscale millimeter PNG, zeros invalid.
Tensor load_pseudo_depth(const std::filesystem::path& path);

// JSON-lines manifest loader. Entries are validated eagerly (schema, file
// existence); pixel data is read lazily in manifest order. A configured
// target size resizes frames bilinearly, labels nearest, and rescales the
// intrinsics accordingly.
class SequenceDataset {
public:
    explicit SequenceDataset(const std::filesystem::path& manifest_path,
                             int resize_h = 0, int resize_w = 0);

    size_t size() const { return entries_.size(); }
    const std::string& name(size_t i) const { return entries_.at(i).name; }
    bool entry_has_pseudo(size_t i) const { return !entries_.at(i).pseudo_depth.empty(); }
    bool entry_has_gt(size_t i) const { return !entries_.at(i).gt_depth.empty(); }
    SampleTriplet load(size_t i) const;

private:
    struct Entry {
        std::string name;
        std::filesystem::path target;
        std::vector<std::filesystem::path> sources;
        Intrinsics intrinsics;
        std::filesystem::path pseudo_depth;  // empty = absent
        std::filesystem::path gt_depth;
        std::filesystem::path seg_mask;
        std::vector<Pose6> gt_pose_to_source;
    };
    std::vector<Entry> entries_;
    int resize_h_, resize_w_;
};

}  // namespace crisp
