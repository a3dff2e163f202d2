#include "crispdepth/data.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "crispdepth/image_io.hpp"

namespace crisp {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

uint64_t mix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

double lattice(uint64_t seed, int64_t ix, int64_t iy) {
    uint64_t h = mix64(seed ^ mix64(static_cast<uint64_t>(ix)));
    h = mix64(h ^ mix64(static_cast<uint64_t>(iy) * 0xD6E8FEB86659FD93ull));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double quintic(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

// smooth value noise in [0,1]
double value_noise(uint64_t seed, double u, double v) {
    const double fu = std::floor(u), fv = std::floor(v);
    const int64_t iu = static_cast<int64_t>(fu), iv = static_cast<int64_t>(fv);
    const double tu = quintic(u - fu), tv = quintic(v - fv);
    const double a = lattice(seed, iu, iv);
    const double b = lattice(seed, iu + 1, iv);
    const double c = lattice(seed, iu, iv + 1);
    const double d = lattice(seed, iu + 1, iv + 1);
    return (a * (1 - tu) + b * tu) * (1 - tv) + (c * (1 - tu) + d * tu) * tv;
}

// band-limited multi-octave texture value in [0,1]
double texture_value(uint64_t seed, double u, double v, int octaves, double scale,
                     double amplitude) {
    double out = 0.5;
    double amp = amplitude;
    double freq = 1.0 / std::max(scale, 1e-6);
    for (int o = 0; o < octaves; ++o) {
        out += amp * 2.0 * (value_noise(seed + 1315423911ull * o, u * freq, v * freq) - 0.5);
        amp *= 0.5;
        freq *= 2.0;
    }
    return std::clamp(out, 0.02, 0.98);
}

struct Hit {
    double t = 0.0;
    int object_index = -1;
    double u = 0.0, v = 0.0;  // surface coords, meters
    int face = 0;
};

std::array<double, 3> cross(const std::array<double, 3>& a, const std::array<double, 3>& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0]};
}
double dot(const std::array<double, 3>& a, const std::array<double, 3>& b) {
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}
std::array<double, 3> sub3(const std::array<double, 3>& a, const std::array<double, 3>& b) {
    return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}
double norm3(const std::array<double, 3>& a) { return std::sqrt(dot(a, a)); }

bool intersect_plane(const std::array<double, 3>& origin, const std::array<double, 3>& dir,
                     const SceneObject& obj, Hit* hit) {
    // origin + t*dir = corner + a*eu + b*ev, solved Moller-Trumbore style
    const auto eu = obj.edge_u, ev = obj.edge_v;
    const auto h = cross(dir, ev);
    const double det = dot(eu, h);
    if (std::fabs(det) < 1e-12) return false;
    const auto s = sub3(origin, obj.corner);
    const double a = dot(s, h) / det;
    if (a < 0.0 || a > 1.0) return false;
    const auto q = cross(s, eu);
    const double b = dot(dir, q) / det;
    if (b < 0.0 || b > 1.0) return false;
    const double t = dot(ev, q) / det;
    if (t < 1e-9) return false;
    hit->t = t;
    hit->u = a * norm3(eu);
    hit->v = b * norm3(ev);
    hit->face = 0;
    return true;
}

bool intersect_box(const std::array<double, 3>& origin, const std::array<double, 3>& dir,
                   const SceneObject& obj, Hit* hit) {
    double tmin = -1e300, tmax = 1e300;
    int axis_min = -1;
    for (int a = 0; a < 3; ++a) {
        const double lo = obj.center[a] - obj.half[a];
        const double hi = obj.center[a] + obj.half[a];
        if (std::fabs(dir[a]) < 1e-12) {
            if (origin[a] < lo || origin[a] > hi) return false;
            continue;
        }
        double t0 = (lo - origin[a]) / dir[a];
        double t1 = (hi - origin[a]) / dir[a];
        if (t0 > t1) std::swap(t0, t1);
        if (t0 > tmin) {
            tmin = t0;
            axis_min = a;
        }
        tmax = std::min(tmax, t1);
        if (tmin > tmax) return false;
    }
    if (tmin < 1e-9 || axis_min < 0) return false;
    std::array<double, 3> p{origin[0] + tmin * dir[0], origin[1] + tmin * dir[1],
                            origin[2] + tmin * dir[2]};
    const int ua = (axis_min + 1) % 3, va = (axis_min + 2) % 3;
    hit->t = tmin;
    hit->u = p[ua] - (obj.center[ua] - obj.half[ua]);
    hit->v = p[va] - (obj.center[va] - obj.half[va]);
    hit->face = axis_min + (dir[axis_min] > 0 ? 0 : 3);
    return true;
}

bool point_in_box(const std::array<double, 3>& p, const SceneObject& obj) {
    for (int a = 0; a < 3; ++a)
        if (std::fabs(p[a] - obj.center[a]) > obj.half[a]) return false;
    return true;
}

void require_keys(const json& j, const std::set<std::string>& allowed,
                  const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw ConfigError("unknown key \"" + it.key() + "\" in " + where);
}

std::array<double, 3> vec3_from(const json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 3)
        throw ConfigError(where + " must be a 3-element array");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Intrinsics intrinsics_from(const json& j, const std::string& where) {
    require_keys(j, {"fx", "fy", "cx", "cy"}, where);
    Intrinsics k{j.at("fx").get<double>(), j.at("fy").get<double>(),
                 j.at("cx").get<double>(), j.at("cy").get<double>()};
    k.validate();
    return k;
}

}  // namespace

void SceneSpec::validate() const {
    if (width <= 0 || height <= 0) throw ConfigError("scene image size must be positive");
    intrinsics.validate();
    if (frames < 2) throw ConfigError("scene needs at least 2 frames");
    if (objects.empty()) throw ConfigError("scene has no objects");
    if (!(max_depth > min_depth) || min_depth <= 0)
        throw ConfigError("scene depth range requires max > min > 0");
    if (texture_octaves < 1) throw ConfigError("texture_octaves must be >= 1");
    if (noise_level < 0) throw ConfigError("noise_level must be >= 0");
}

SceneSpec scene_spec_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("scene spec is not valid JSON: ") + e.what());
    }
    require_keys(j,
                 {"width", "height", "intrinsics", "seed", "frames", "noise_level",
                  "camera", "depth_range", "texture", "emit_pseudo_depth",
                  "use_next_source", "objects"},
                 "scene spec");
    SceneSpec s;
    if (j.count("width")) s.width = j["width"].get<int>();
    if (j.count("height")) s.height = j["height"].get<int>();
    if (j.count("intrinsics")) s.intrinsics = intrinsics_from(j["intrinsics"], "intrinsics");
    if (j.count("seed")) s.seed = j["seed"].get<uint64_t>();
    if (j.count("frames")) s.frames = j["frames"].get<int>();
    if (j.count("noise_level")) s.noise_level = j["noise_level"].get<double>();
    if (j.count("camera")) {
        const json& c = j["camera"];
        require_keys(c, {"start", "step", "rot_step"}, "camera");
        if (c.count("start")) s.cam_start = vec3_from(c["start"], "camera.start");
        if (c.count("step")) s.cam_step = vec3_from(c["step"], "camera.step");
        if (c.count("rot_step")) s.cam_rot_step = vec3_from(c["rot_step"], "camera.rot_step");
    }
    if (j.count("depth_range")) {
        const json& d = j["depth_range"];
        require_keys(d, {"min", "max"}, "depth_range");
        s.min_depth = d.at("min").get<double>();
        s.max_depth = d.at("max").get<double>();
    }
    if (j.count("texture")) {
        const json& t = j["texture"];
        require_keys(t, {"octaves", "scale", "amplitude"}, "texture");
        if (t.count("octaves")) s.texture_octaves = t["octaves"].get<int>();
        if (t.count("scale")) s.texture_scale = t["scale"].get<double>();
        if (t.count("amplitude")) s.texture_amplitude = t["amplitude"].get<double>();
    }
    if (j.count("emit_pseudo_depth")) s.emit_pseudo_depth = j["emit_pseudo_depth"].get<bool>();
    if (j.count("use_next_source")) s.use_next_source = j["use_next_source"].get<bool>();
    if (j.count("objects")) {
        for (const json& o : j["objects"]) {
            SceneObject obj;
            const std::string type = o.at("type").get<std::string>();
            if (type == "plane") {
                require_keys(o, {"type", "corner", "edge_u", "edge_v"}, "plane object");
                obj.type = SceneObject::Type::kPlane;
                obj.corner = vec3_from(o.at("corner"), "plane.corner");
                obj.edge_u = vec3_from(o.at("edge_u"), "plane.edge_u");
                obj.edge_v = vec3_from(o.at("edge_v"), "plane.edge_v");
            } else if (type == "box") {
                require_keys(o, {"type", "center", "half"}, "box object");
                obj.type = SceneObject::Type::kBox;
                obj.center = vec3_from(o.at("center"), "box.center");
                obj.half = vec3_from(o.at("half"), "box.half");
            } else {
                throw ConfigError("unknown object type \"" + type + "\"");
            }
            s.objects.push_back(obj);
        }
    }
    s.validate();
    return s;
}

SceneSpec scene_spec_from_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open scene spec " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return scene_spec_from_json_text(ss.str());
}

std::vector<RenderedFrame> render_scene(const SceneSpec& spec) {
    spec.validate();
    std::vector<RenderedFrame> frames;

    Mat4 step = pose_to_matrix(Pose6{spec.cam_rot_step, spec.cam_step});
    Mat4 wfc = pose_to_matrix(Pose6{{0, 0, 0}, spec.cam_start});

    for (int f = 0; f < spec.frames; ++f) {
        const std::array<double, 3> origin{wfc.at(0, 3), wfc.at(1, 3), wfc.at(2, 3)};
        for (size_t oi = 0; oi < spec.objects.size(); ++oi)
            if (spec.objects[oi].type == SceneObject::Type::kBox &&
                point_in_box(origin, spec.objects[oi]))
                throw Error("camera of frame " + std::to_string(f) +
                            " is inside box object " + std::to_string(oi));

        RenderedFrame rf;
        rf.world_from_camera = wfc;
        rf.image = Tensor(1, 3, spec.height, spec.width);
        rf.depth = Tensor(1, 1, spec.height, spec.width);
        rf.seg = Tensor(1, 1, spec.height, spec.width);

        int64_t visible = 0;
        for (int y = 0; y < spec.height; ++y)
            for (int x = 0; x < spec.width; ++x) {
                const std::array<double, 3> dir_cam{
                    (x - spec.intrinsics.cx) / spec.intrinsics.fx,
                    (y - spec.intrinsics.cy) / spec.intrinsics.fy, 1.0};
                std::array<double, 3> dir;
                for (int i = 0; i < 3; ++i)
                    dir[i] = wfc.at(i, 0) * dir_cam[0] + wfc.at(i, 1) * dir_cam[1] +
                             wfc.at(i, 2) * dir_cam[2];

                Hit best;
                best.t = 1e300;
                for (size_t oi = 0; oi < spec.objects.size(); ++oi) {
                    Hit h;
                    const bool ok = spec.objects[oi].type == SceneObject::Type::kPlane
                                        ? intersect_plane(origin, dir, spec.objects[oi], &h)
                                        : intersect_box(origin, dir, spec.objects[oi], &h);
                    if (ok && h.t < best.t) {
                        best = h;
                        best.object_index = static_cast<int>(oi);
                    }
                }
                if (best.object_index < 0) continue;
                // ray parameter equals camera-frame depth because dir_cam.z = 1
                const double depth = best.t;
                if (depth < spec.min_depth || depth > spec.max_depth)
                    throw Error("frame " + std::to_string(f) + " hit at depth " +
                                std::to_string(depth) + " outside the declared range");
                ++visible;
                rf.depth.at(0, 0, y, x) = static_cast<float>(depth);
                rf.seg.at(0, 0, y, x) = static_cast<float>(best.object_index + 1);
                for (int c = 0; c < 3; ++c) {
                    const uint64_t tex_seed =
                        spec.seed + 7919ull * (best.object_index + 1) +
                        104729ull * best.face + 15485863ull * c;
                    double v = texture_value(tex_seed, best.u, best.v,
                                             spec.texture_octaves, spec.texture_scale,
                                             spec.texture_amplitude);
                    if (spec.noise_level > 0.0) {
                        const uint64_t px_seed =
                            mix64(spec.seed ^ (static_cast<uint64_t>(f) << 40) ^
                                  (static_cast<uint64_t>(y * spec.width + x) << 8) ^
                                  static_cast<uint64_t>(c));
                        const double n =
                            (static_cast<double>(px_seed >> 11) * 0x1.0p-53 - 0.5) * 2.0;
                        v += n * spec.noise_level;
                    }
                    rf.image.at(0, c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
                }
            }
        if (visible == 0)
            throw Error("camera of frame " + std::to_string(f) + " sees no surface");
        frames.push_back(std::move(rf));
        wfc = mat_mul(wfc, step);
    }
    return frames;
}

std::vector<SampleTriplet> generate_synthetic_sequence(const SceneSpec& spec) {
    const std::vector<RenderedFrame> frames = render_scene(spec);
    std::vector<SampleTriplet> out;
    for (int i = 1; i < static_cast<int>(frames.size()); ++i) {
        SampleTriplet t;
        char buf[32];
        std::snprintf(buf, sizeof(buf), "frame%03d", i);
        t.name = buf;
        t.target = frames[i].image;
        t.intrinsics = spec.intrinsics;
        t.gt_depth = frames[i].depth;
        if (spec.emit_pseudo_depth) t.pseudo_depth = frames[i].depth;
        t.seg_mask = frames[i].seg;

        auto add_source = [&](int s) {
            t.sources.push_back(frames[s].image);
            const Mat4 rel = mat_mul(rigid_inverse(frames[s].world_from_camera),
                                     frames[i].world_from_camera);
            t.gt_pose_to_source.push_back(pose_from_matrix(rel));
        };
        add_source(i - 1);
        if (spec.use_next_source && i + 1 < static_cast<int>(frames.size()))
            add_source(i + 1);
        out.push_back(std::move(t));
    }
    return out;
}

fs::path write_synthetic_dataset(const SceneSpec& spec, const fs::path& out_dir) {
    const std::vector<RenderedFrame> frames = render_scene(spec);  // validates first
    fs::create_directories(out_dir);

    auto img_name = [](int i) {
        char b[32];
        std::snprintf(b, sizeof(b), "f%03d.png", i);
        return std::string(b);
    };
    auto depth_name = [](int i) {
        char b[32];
        std::snprintf(b, sizeof(b), "d%03d.png", i);
        return std::string(b);
    };
    auto mask_name = [](int i) {
        char b[32];
        std::snprintf(b, sizeof(b), "m%03d.png", i);
        return std::string(b);
    };

    for (int i = 0; i < static_cast<int>(frames.size()); ++i) {
        io::write_image_png(out_dir / img_name(i), frames[i].image);
        io::write_depth_png(out_dir / depth_name(i), frames[i].depth);
        io::write_mask_png(out_dir / mask_name(i), frames[i].seg);
    }

    std::ostringstream manifest;
    for (int i = 1; i < static_cast<int>(frames.size()); ++i) {
        json entry;
        entry["target"] = img_name(i);
        json sources = json::array();
        json poses = json::array();
        auto add_source = [&](int s) {
            sources.push_back(img_name(s));
            const Mat4 rel = mat_mul(rigid_inverse(frames[s].world_from_camera),
                                     frames[i].world_from_camera);
            const Pose6 p = pose_from_matrix(rel);
            poses.push_back({p.rotation[0], p.rotation[1], p.rotation[2],
                             p.translation[0], p.translation[1], p.translation[2]});
        };
        add_source(i - 1);
        if (spec.use_next_source && i + 1 < static_cast<int>(frames.size()))
            add_source(i + 1);
        entry["sources"] = sources;
        entry["intrinsics"] = {{"fx", spec.intrinsics.fx},
                               {"fy", spec.intrinsics.fy},
                               {"cx", spec.intrinsics.cx},
                               {"cy", spec.intrinsics.cy}};
        if (spec.emit_pseudo_depth) entry["pseudo_depth"] = depth_name(i);
        entry["gt_depth"] = depth_name(i);
        entry["seg_mask"] = mask_name(i);
        entry["gt_pose_to_source"] = poses;
        manifest << entry.dump() << "\n";
    }
    const fs::path manifest_path = out_dir / "manifest.jsonl";
    io::atomic_write_text(manifest_path, manifest.str());
    return manifest_path;
}

Tensor load_pseudo_depth(const fs::path& path) { return io::read_depth_png(path); }

SequenceDataset::SequenceDataset(const fs::path& manifest_path, int resize_h, int resize_w)
    : resize_h_(resize_h), resize_w_(resize_w) {
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot open manifest " + manifest_path.string());
    const fs::path dir = manifest_path.parent_path();

    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ConfigError("manifest line " + std::to_string(line_no) +
                              " is not valid JSON: " + e.what());
        }
        try {
            require_keys(j,
                         {"target", "sources", "intrinsics", "pseudo_depth", "gt_depth",
                          "seg_mask", "gt_pose_to_source"},
                         "manifest line " + std::to_string(line_no));
            Entry e;
            e.target = dir / j.at("target").get<std::string>();
            e.name = j.at("target").get<std::string>();
            for (const json& s : j.at("sources"))
                e.sources.push_back(dir / s.get<std::string>());
            if (e.sources.empty())
                throw ConfigError("entry needs at least one source");
            e.intrinsics = intrinsics_from(j.at("intrinsics"), "intrinsics");
            if (j.count("pseudo_depth"))
                e.pseudo_depth = dir / j["pseudo_depth"].get<std::string>();
            if (j.count("gt_depth")) e.gt_depth = dir / j["gt_depth"].get<std::string>();
            if (j.count("seg_mask")) e.seg_mask = dir / j["seg_mask"].get<std::string>();
            if (j.count("gt_pose_to_source")) {
                for (const json& p : j["gt_pose_to_source"]) {
                    if (!p.is_array() || p.size() != 6)
                        throw ConfigError("gt_pose_to_source entries must be 6-vectors");
                    Pose6 pose;
                    for (int k = 0; k < 3; ++k) {
                        pose.rotation[k] = p[k].get<double>();
                        pose.translation[k] = p[k + 3].get<double>();
                    }
                    e.gt_pose_to_source.push_back(pose);
                }
                if (e.gt_pose_to_source.size() != e.sources.size())
                    throw ConfigError("gt_pose_to_source count differs from sources");
            }
            for (const fs::path& p : {e.target})
                if (!fs::exists(p))
                    throw IoError("missing file " + p.string() + " referenced by entry \"" +
                                  e.name + "\"");
            for (const fs::path& p : e.sources)
                if (!fs::exists(p))
                    throw IoError("missing file " + p.string() + " referenced by entry \"" +
                                  e.name + "\"");
            for (const fs::path& p : {e.pseudo_depth, e.gt_depth, e.seg_mask})
                if (!p.empty() && !fs::exists(p))
                    throw IoError("missing file " + p.string() + " referenced by entry \"" +
                                  e.name + "\"");
            entries_.push_back(std::move(e));
        } catch (const json::exception& e) {
            throw ConfigError("manifest line " + std::to_string(line_no) +
                              " schema error: " + e.what());
        }
    }
    if (entries_.empty()) throw ConfigError("manifest " + manifest_path.string() + " is empty");
}

SampleTriplet SequenceDataset::load(size_t i) const {
    const Entry& e = entries_.at(i);
    SampleTriplet t;
    t.name = e.name;
    t.target = io::read_image_png(e.target);
    for (const fs::path& s : e.sources) t.sources.push_back(io::read_image_png(s));
    t.intrinsics = e.intrinsics;
    if (!e.pseudo_depth.empty()) t.pseudo_depth = io::read_depth_png(e.pseudo_depth);
    if (!e.gt_depth.empty()) t.gt_depth = io::read_depth_png(e.gt_depth);
    if (!e.seg_mask.empty()) t.seg_mask = io::read_mask_png(e.seg_mask);
    t.gt_pose_to_source = e.gt_pose_to_source;

    if (resize_h_ > 0 && resize_w_ > 0 &&
        (t.target.h() != resize_h_ || t.target.w() != resize_w_)) {
        const double sx = static_cast<double>(resize_w_) / t.target.w();
        const double sy = static_cast<double>(resize_h_) / t.target.h();
        t.intrinsics = t.intrinsics.scaled(sx, sy);
        t.target = io::resize_bilinear(t.target, resize_h_, resize_w_);
        for (Tensor& s : t.sources) s = io::resize_bilinear(s, resize_h_, resize_w_);
        if (!t.pseudo_depth.empty())
            t.pseudo_depth = io::resize_nearest(t.pseudo_depth, resize_h_, resize_w_);
        if (!t.gt_depth.empty())
            t.gt_depth = io::resize_nearest(t.gt_depth, resize_h_, resize_w_);
        if (!t.seg_mask.empty())
            t.seg_mask = io::resize_nearest(t.seg_mask, resize_h_, resize_w_);
    }
    return t;
}

}  // namespace crisp
