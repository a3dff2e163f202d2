#include "crispdepth/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <sstream>

#include "crispdepth/image_io.hpp"
#include "crispdepth/plot.hpp"
#include "crispdepth/posenet.hpp"
#include "crispdepth/trainer.hpp"

namespace crisp::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int cmd_synth_data(const std::string& spec_path, const std::string& out_dir) {
    const SceneSpec spec = scene_spec_from_json_file(spec_path);
    const fs::path manifest = write_synthetic_dataset(spec, out_dir);
    std::printf("wrote %s\n", manifest.string().c_str());
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_dir,
              const std::vector<std::string>& overrides) {
    const ExperimentConfig cfg = ExperimentConfig::from_file(config_path, overrides);
    const TrainOutcome out = train(cfg, out_dir);
    std::printf("steps: %lld\n", static_cast<long long>(out.steps));
    if (out.validated) std::printf("best val abs_rel: %.6f\n", out.best_val_abs_rel);
    std::printf("best checkpoint: %s\nlast checkpoint: %s\nlog: %s\n",
                out.best_checkpoint.string().c_str(),
                out.last_checkpoint.string().c_str(), out.log_path.string().c_str());
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& manifest,
             const std::string& out_dir, double threshold) {
    const EvalOutcome e = evaluate_checkpoint(ckpt, manifest, fs::path(out_dir), threshold);
    std::printf("frames: %lld  abs_rel: %.6f  rmse: %.6f  d1: %.4f  d2: %.4f  d3: %.4f\n",
                static_cast<long long>(e.frames), e.abs_rel, e.rmse, e.delta1, e.delta2,
                e.delta3);
    if (e.frames - e.dbe_undefined_frames > 0)
        std::printf("dbe_acc: %.6f px (%lld frames undefined)\n", e.dbe_acc,
                    static_cast<long long>(e.dbe_undefined_frames));
    else
        std::printf("dbe_acc: undefined on all frames\n");
    return 0;
}

std::string ply_text(const Tensor& points, const Tensor& image) {
    const int H = points.h(), W = points.w();
    std::ostringstream os;
    os << "ply\nformat ascii 1.0\nelement vertex " << static_cast<int64_t>(H) * W
       << "\nproperty float x\nproperty float y\nproperty float z\n"
          "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            os << points.at(0, 0, y, x) << " " << points.at(0, 1, y, x) << " "
               << points.at(0, 2, y, x);
            for (int c = 0; c < 3; ++c)
                os << " "
                   << static_cast<int>(std::lround(
                          std::clamp(image.at(0, c, y, x), 0.0f, 1.0f) * 255.0f));
            os << "\n";
        }
    return os.str();
}

int cmd_infer(const std::string& ckpt_path, const std::vector<std::string>& images,
              const std::string& out_dir, bool ply, double fx, double fy, double cx,
              double cy) {
    const CheckpointData ckpt = load_checkpoint(ckpt_path);
    if (ckpt.task != "depth") throw Error("infer needs a depth checkpoint");
    TrainSession session(ckpt);
    const int stride = session.config().encoder.total_stride();
    fs::create_directories(out_dir);

    for (const std::string& img_path : images) {
        const Tensor image = io::read_image_png(img_path);
        if (image.h() % stride != 0 || image.w() % stride != 0) {
            auto nearest = [&](int v) {
                return std::max(stride, static_cast<int>(std::lround(
                                            static_cast<double>(v) / stride)) * stride);
            };
            throw Error("image " + img_path + " is " + std::to_string(image.w()) + "x" +
                        std::to_string(image.h()) +
                        ", not divisible by the model stride " + std::to_string(stride) +
                        "; nearest valid size is " + std::to_string(nearest(image.w())) +
                        "x" + std::to_string(nearest(image.h())));
        }
        const DepthPrediction pred = session.predict(image);
        const fs::path stem = fs::path(img_path).stem();
        const fs::path depth_out = fs::path(out_dir) / (stem.string() + "_depth.png");
        io::write_depth_png(depth_out, pred.depth->value);
        std::printf("wrote %s\n", depth_out.string().c_str());
        if (ply) {
            Intrinsics k{fx, fy, cx, cy};
            if (k.fx <= 0 || k.fy <= 0) {
                // plausible default: focal = width, center = image middle
                k.fx = k.fy = image.w();
                k.cx = (image.w() - 1) / 2.0;
                k.cy = (image.h() - 1) / 2.0;
            }
            const Tensor pts = backproject(pred.depth->value, k);
            const fs::path ply_out = fs::path(out_dir) / (stem.string() + ".ply");
            io::atomic_write_text(ply_out, ply_text(pts, image));
            std::printf("wrote %s\n", ply_out.string().c_str());
        }
    }
    return 0;
}

int cmd_plot(const std::string& pred_path, const std::string& gt_path,
             const std::string& out_dir, double threshold) {
    const Tensor pred = io::read_depth_png(pred_path);
    fs::create_directories(out_dir);
    float lo = 0, hi = 0;
    const Tensor vis = colormap_depth(pred, &lo, &hi);
    io::write_image_png(fs::path(out_dir) / "depth_vis.png", vis);
    io::write_image_png(fs::path(out_dir) / "boundary_overlay.png",
                        boundary_overlay(pred, threshold));

    json meta;
    meta["min_m"] = lo;
    meta["max_m"] = hi;
    meta["boundary_threshold"] = threshold;
    if (!gt_path.empty()) {
        const Tensor gt = io::read_depth_png(gt_path);
        if (!gt.same_shape(pred))
            throw ShapeError("ground truth shape " + gt.shape_str() +
                             " does not match prediction " + pred.shape_str());
        io::write_image_png(fs::path(out_dir) / "gt_vis.png", colormap_depth(gt));
        const MetricReport r = standard_metrics(pred, gt, true, pred_path);
        meta["abs_rel"] = r.abs_rel;
        meta["rmse"] = r.rmse;
    }
    io::atomic_write_text(fs::path(out_dir) / "plot_meta.json", meta.dump(2) + "\n");
    std::printf("wrote %s\n", (fs::path(out_dir) / "depth_vis.png").string().c_str());
    return 0;
}

int cmd_param_count(const std::string& config_path,
                    const std::vector<std::string>& overrides) {
    const ExperimentConfig cfg = ExperimentConfig::from_file(config_path, overrides);
    Rng rng(cfg.seed);
    Encoder encoder(cfg.encoder, rng);
    Decoder decoder(cfg.encoder, cfg.effective_decoder(), rng);
    PoseNet pose(cfg.encoder.input_channels, cfg.pose, rng);
    const int64_t enc = count_parameters(encoder);
    const int64_t dec = count_parameters(decoder);
    const int64_t pos = count_parameters(pose);
    if (enc == 0 || dec == 0) throw Error("degenerate model: zero parameters");
    std::printf("%-12s %12s\n", "module", "parameters");
    std::printf("%-12s %12lld\n", "backbone", static_cast<long long>(enc));
    std::printf("%-12s %12lld\n", "decoder", static_cast<long long>(dec));
    std::printf("%-12s %12lld\n", "posenet", static_cast<long long>(pos));
    std::printf("%-12s %12lld\n", "total", static_cast<long long>(enc + dec + pos));
    return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"self-supervised monocular depth with boundary refinement"};
    app.require_subcommand(1);

    std::string spec_path, out_dir, config_path, ckpt, manifest, pred_path, gt_path;
    std::vector<std::string> overrides, images;
    bool ply = false;
    double threshold = 0.1;
    double fx = 0, fy = 0, cx = 0, cy = 0;

    auto* synth = app.add_subcommand("synth-data", "render a synthetic dataset");
    synth->add_option("--spec", spec_path, "scene spec JSON")->required();
    synth->add_option("--out", out_dir, "output directory")->required();

    auto* tr = app.add_subcommand("train", "train depth or teacher networks");
    tr->add_option("--config", config_path, "experiment config JSON")->required();
    tr->add_option("--out", out_dir, "output directory")->required();
    tr->add_option("--set", overrides, "dotted-key override, e.g. loss.gamma=0");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint against ground truth");
    ev->add_option("--checkpoint", ckpt, "depth checkpoint")->required();
    ev->add_option("--manifest", manifest, "dataset manifest")->required();
    ev->add_option("--out", out_dir, "output directory")->required();
    ev->add_option("--boundary-threshold", threshold, "edge threshold on log depth");

    auto* in = app.add_subcommand("infer", "predict depth for images");
    in->add_option("--checkpoint", ckpt, "depth checkpoint")->required();
    in->add_option("images", images, "input PNG image(s)")->required();
    in->add_option("--out", out_dir, "output directory")->required();
    in->add_flag("--ply", ply, "also export a point cloud per image");
    in->add_option("--fx", fx, "focal length x for the point cloud");
    in->add_option("--fy", fy, "focal length y for the point cloud");
    in->add_option("--cx", cx, "principal point x");
    in->add_option("--cy", cy, "principal point y");

    auto* pl = app.add_subcommand("plot", "colormapped depth and boundary overlay");
    pl->add_option("--pred", pred_path, "predicted depth PNG")->required();
    pl->add_option("--gt", gt_path, "ground-truth depth PNG");
    pl->add_option("--out", out_dir, "output directory")->required();
    pl->add_option("--boundary-threshold", threshold, "edge threshold on log depth");

    auto* pc = app.add_subcommand("param-count", "per-module parameter audit");
    pc->add_option("--config", config_path, "experiment config JSON")->required();
    pc->add_option("--set", overrides, "dotted-key override");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (synth->parsed()) return cmd_synth_data(spec_path, out_dir);
        if (tr->parsed()) return cmd_train(config_path, out_dir, overrides);
        if (ev->parsed()) return cmd_eval(ckpt, manifest, out_dir, threshold);
        if (in->parsed()) return cmd_infer(ckpt, images, out_dir, ply, fx, fy, cx, cy);
        if (pl->parsed()) return cmd_plot(pred_path, gt_path, out_dir, threshold);
        if (pc->parsed()) return cmd_param_count(config_path, overrides);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}

int run(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.push_back("crispdepth");
    for (const std::string& a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace crisp::cli
