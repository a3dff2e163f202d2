#include "crispdepth/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <limits>
#include <sstream>

#include "crispdepth/image_io.hpp"
#include "crispdepth/losses.hpp"
#include "crispdepth/posenet.hpp"

namespace crisp {

using ad::Var;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

Var average(const std::vector<Var>& terms) {
    Var acc;
    for (const Var& t : terms) acc = acc ? ad::add(acc, t) : t;
    if (terms.size() > 1) acc = ad::mul_const(acc, 1.0f / terms.size());
    return acc;
}

double tensor_median_where(const Tensor& values, const Tensor& where_positive) {
    std::vector<double> v;
    for (int64_t i = 0; i < values.size(); ++i)
        if (where_positive.data()[i] > 0.0f) v.push_back(values.data()[i]);
    if (v.empty()) return 0.0;
    const size_t k = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + k, v.end());
    return v[k];
}

// tensor names in checkpoints carry a network prefix
void collect_tensors(const nn::Module& m, const std::string& prefix,
                     std::vector<std::pair<std::string, Tensor>>* out) {
    for (const auto& [name, v] : m.named_parameters())
        out->emplace_back(prefix + "." + name, v->value);
}

void load_into(nn::Module& m, const std::string& prefix,
               const std::vector<std::pair<std::string, Tensor>>& tensors,
               bool require_all = true) {
    std::map<std::string, const Tensor*> table;
    for (const auto& [name, t] : tensors) table[name] = &t;
    for (auto& [name, v] : m.named_parameters()) {
        auto it = table.find(prefix + "." + name);
        if (it == table.end()) {
            if (require_all)
                throw Error("checkpoint is missing tensor " + prefix + "." + name);
            continue;
        }
        if (!v->value.same_shape(*it->second))
            throw ShapeError("checkpoint tensor " + prefix + "." + name +
                             " has shape " + it->second->shape_str() + ", expected " +
                             v->value.shape_str());
        v->value = *it->second;
    }
}

int seg_class_count(const SequenceDataset& data) {
    int classes = 0;
    for (size_t i = 0; i < data.size(); ++i) {
        const SampleTriplet t = data.load(i);
        if (!t.has_seg_mask())
            throw Error("teacher preparation needs seg_mask labels; entry \"" +
                        t.name + "\" has none");
        classes = std::max(classes, static_cast<int>(t.seg_mask.max_value()) + 1);
    }
    if (classes < 2) throw Error("segmentation masks contain fewer than 2 classes");
    return classes;
}

}  // namespace

struct TrainSession::Impl {
    std::unique_ptr<DepthNet> depth;
    std::unique_ptr<PoseNet> pose;
    std::unique_ptr<Encoder> teacher;  // frozen, stage 2 / sem-in-stage-1
    std::unique_ptr<nn::Conv2d> joint_head;
    std::unique_ptr<Encoder> seg_encoder;  // teacher task
    std::unique_ptr<nn::Conv2d> seg_head;
    int seg_classes = 0;
    std::unique_ptr<nn::Adam> adam;
    uint64_t teacher_hash = 0;
};

TrainSession::TrainSession(const ExperimentConfig& cfg) : cfg_(cfg), impl_(new Impl) {
    cfg_.validate();
    rng_ = std::make_unique<Rng>(cfg_.seed);

    if (cfg_.task == "teacher") {
        if (cfg_.train_manifest.empty())
            throw ConfigError("teacher preparation needs data.train_manifest");
        SequenceDataset data(cfg_.train_manifest, cfg_.image_height, cfg_.image_width);
        impl_->seg_classes = seg_class_count(data);
        impl_->seg_encoder = std::make_unique<Encoder>(cfg_.encoder, *rng_);
        impl_->seg_head = std::make_unique<nn::Conv2d>(
            cfg_.encoder.stage_channels[0], impl_->seg_classes, 1, 1, 0, *rng_);
        std::vector<Var> params;
        for (auto& [n, v] : impl_->seg_encoder->named_parameters()) params.push_back(v);
        for (auto& [n, v] : impl_->seg_head->named_parameters()) params.push_back(v);
        impl_->adam = std::make_unique<nn::Adam>(params, cfg_.learning_rate);
        return;
    }

    impl_->depth = std::make_unique<DepthNet>(cfg_.encoder, cfg_.effective_decoder(), *rng_);
    impl_->pose = std::make_unique<PoseNet>(cfg_.encoder.input_channels, cfg_.pose, *rng_);

    if (cfg_.stage == 2) {
        const CheckpointData prev = load_checkpoint(cfg_.stage1_checkpoint);
        load_into(impl_->depth->encoder(), "depth.encoder", prev.tensors);
        load_into(impl_->depth->decoder(), "depth.decoder", prev.tensors);
        load_into(*impl_->pose, "pose", prev.tensors);
    } else if (cfg_.pretrained_init) {
        const CheckpointData prev = load_checkpoint(cfg_.pretrained_path);
        // accept either a depth checkpoint or a teacher checkpoint
        bool depth_style = false;
        for (const auto& [name, t] : prev.tensors)
            if (name.rfind("depth.encoder.", 0) == 0) depth_style = true;
        load_into(impl_->depth->encoder(), depth_style ? "depth.encoder" : "encoder",
                  prev.tensors);
    }

    const bool needs_teacher = cfg_.stage == 2 || cfg_.semantic_loss_in_stage1;
    if (needs_teacher) {
        if (cfg_.teacher_checkpoint.empty())
            throw ConfigError("semantic loss needs teacher_checkpoint");
        EncoderConfig tcfg;
        impl_->teacher = load_frozen_teacher(cfg_.teacher_checkpoint, &tcfg);
        if (tcfg.stage_channels != cfg_.encoder.stage_channels ||
            tcfg.stage_downsample != cfg_.encoder.stage_downsample)
            throw ShapeError(
                "teacher pyramid is not shape-compatible with the student encoder");
        impl_->teacher_hash = impl_->teacher->weights_hash();
    }
    if (cfg_.joint_semantic_decoder) {
        // joint baseline: small segmentation head on the shared encoder
        impl_->joint_head = std::make_unique<nn::Conv2d>(
            cfg_.encoder.stage_channels[0], 8, 1, 1, 0, *rng_);
    }

    std::vector<Var> params;
    for (auto& [n, v] : impl_->depth->named_parameters()) params.push_back(v);
    for (auto& [n, v] : impl_->pose->named_parameters()) params.push_back(v);
    if (impl_->joint_head)
        for (auto& [n, v] : impl_->joint_head->named_parameters()) params.push_back(v);
    impl_->adam = std::make_unique<nn::Adam>(params, cfg_.learning_rate);
}

TrainSession::TrainSession(const CheckpointData& ckpt)
    : TrainSession(ExperimentConfig::from_json(ckpt.config)) {
    step_ = ckpt.step;
    rng_->restore_state(ckpt.rng_state);
    if (cfg_.task == "teacher") {
        load_into(*impl_->seg_encoder, "encoder", ckpt.tensors);
        load_into(*impl_->seg_head, "head", ckpt.tensors);
    } else {
        load_into(*impl_->depth, "depth", ckpt.tensors);
        load_into(*impl_->pose, "pose", ckpt.tensors);
        if (impl_->joint_head) load_into(*impl_->joint_head, "joint_head", ckpt.tensors);
    }
    if (ckpt.has_adam) {
        auto& m = impl_->adam->moments1();
        auto& v = impl_->adam->moments2();
        if (ckpt.adam_m.size() != m.size())
            throw Error("optimizer state size mismatch in checkpoint");
        m = ckpt.adam_m;
        v = ckpt.adam_v;
        impl_->adam->set_step_count(ckpt.adam_step);
    }
}

TrainSession::~TrainSession() = default;

DepthNet& TrainSession::depth() {
    if (!impl_->depth) throw Error("no depth network in a teacher session");
    return *impl_->depth;
}
PoseNet& TrainSession::pose() { return *impl_->pose; }
const Encoder* TrainSession::teacher() const { return impl_->teacher.get(); }
uint64_t TrainSession::teacher_hash() const {
    return impl_->teacher ? impl_->teacher->weights_hash() : 0;
}

DepthPrediction TrainSession::predict(const Tensor& image) const {
    return impl_->depth->predict(ad::constant(image));
}

LossBundle TrainSession::sample_losses(const SampleTriplet& t, bool& used_sem) {
    const ExperimentConfig& cfg = cfg_;
    Var target = ad::constant(t.target);
    FeaturePyramid pyr = impl_->depth->encode(target);
    DepthPrediction pred = impl_->depth->decoder().decode(pyr);

    if (t.sources.empty()) throw Error("triplet \"" + t.name + "\" has no source frames");
    std::vector<Var> view_terms, geo_terms;
    for (const Tensor& src : t.sources) {
        Var source = ad::constant(src);
        PoseVar pose = impl_->pose->estimate(target, source);
        WarpResult wi = warp_image(source, pred.depth, pose, t.intrinsics);
        view_terms.push_back(
            view_reconstruction_loss(target, wi.synthesized, wi.valid, cfg.loss.lambda));
        DepthPrediction pred_src = impl_->depth->predict(source);
        WarpResult wd = warp_depth(pred_src.depth, pred.depth, pose, t.intrinsics);
        geo_terms.push_back(
            geometric_consistency_loss(wd.computed_depth, wd.synthesized, wd.valid));
    }
    Var view = average(view_terms);
    Var geo = average(geo_terms);

    Var bnd;
    if (cfg.loss.gamma > 0.0f) {
        if (t.has_pseudo_depth()) {
            const Tensor& pd = t.pseudo_depth;
            // Align the prediction to the label's median scale (factor
            // detached). Scaling the label down to the prediction instead
            // would shrink the target edge magnitudes with it and reward
            // flat low-depth predictions.
            Var pred_aligned = pred.depth;
            if (cfg.median_scale_pseudo) {
                const double mp = tensor_median_where(pred.depth->value, pd);
                const double ml = tensor_median_where(pd, pd);
                if (mp > 0.0 && ml > 0.0)
                    pred_aligned =
                        ad::mul_const(pred.depth, static_cast<float>(ml / mp));
            }
            bnd = boundary_alignment_loss(pred_aligned, ad::constant(pd),
                                          cfg.loss.theta, cfg.loss.vartheta);
        } else if (!warned_missing_pseudo_) {
            warn("triplet \"" + t.name + "\" has no pseudo-depth; boundary term skipped");
            warned_missing_pseudo_ = true;
        }
    }

    Var sem;
    used_sem = false;
    if (impl_->teacher && (cfg.stage == 2 || cfg.semantic_loss_in_stage1)) {
        FeaturePyramid tp = impl_->teacher->encode(target);
        sem = semantic_information_loss(pyr.levels, tp.levels, cfg.semantic_per_pixel);
        used_sem = true;
    }

    LossBundle bundle = used_sem ? stage2_total(view, geo, bnd, sem, cfg.loss)
                                 : stage1_total(view, geo, bnd, cfg.loss);
    bundle.stage = cfg.stage;

    if (impl_->joint_head && t.has_seg_mask()) {
        Var logits = impl_->joint_head->forward(pyr.levels[0]);
        logits = ad::upsample_nearest(logits, cfg.encoder.strides()[0]);
        Var ce = ad::softmax_cross_entropy(logits, t.seg_mask);
        bundle.total_var =
            ad::add(bundle.total_var, ad::mul_const(ce, cfg.joint_seg_weight));
        bundle.joint_seg = ad::value0(ce);
        bundle.joint_present = true;
        bundle.total += cfg.joint_seg_weight * bundle.joint_seg;
    }
    return bundle;
}

LossBundle TrainSession::train_batch(const std::vector<SampleTriplet>& batch) {
    if (batch.empty()) throw Error("empty batch");
    impl_->adam->zero_grad();

    LossBundle mean;
    bool any_bnd = false, any_sem = false;
    const float inv_b = 1.0f / batch.size();

    for (const SampleTriplet& t : batch) {
        LossBundle b;
        if (cfg_.task == "teacher") {
            Var image = ad::constant(t.target);
            FeaturePyramid pyr = impl_->seg_encoder->encode(image);
            Var logits = impl_->seg_head->forward(pyr.levels[0]);
            logits = ad::upsample_nearest(logits, cfg_.encoder.strides()[0]);
            Var ce = ad::softmax_cross_entropy(logits, t.seg_mask);
            b.view = 0;
            b.total = ad::value0(ce);
            b.total_var = ce;
        } else {
            bool used_sem = false;
            b = sample_losses(t, used_sem);
            any_sem |= used_sem;
            any_bnd |= b.bnd_present;
        }
        if (!std::isfinite(b.total))
            throw Error("non-finite loss at step " + std::to_string(step_ + 1) +
                        " on \"" + t.name + "\": view=" + std::to_string(b.view) +
                        " geo=" + std::to_string(b.geo) + " bnd=" + std::to_string(b.bnd) +
                        " sem=" + std::to_string(b.sem));
        ad::backward(ad::mul_const(b.total_var, inv_b));
        mean.view += b.view * inv_b;
        mean.geo += b.geo * inv_b;
        mean.bnd += b.bnd * inv_b;
        mean.sem += b.sem * inv_b;
        mean.joint_seg += b.joint_seg * inv_b;
        mean.joint_present |= b.joint_present;
        mean.total += b.total * inv_b;
    }
    impl_->adam->step();
    ++step_;
    mean.stage = cfg_.stage;
    mean.bnd_present = any_bnd;
    mean.sem_present = any_sem;
    return mean;
}

LossBundle TrainSession::eval_losses(const SampleTriplet& t) {
    bool used_sem = false;
    return sample_losses(t, used_sem);
}

Tensor TrainSession::predict_seg(const Tensor& image) const {
    if (!impl_->seg_encoder) throw Error("not a teacher session");
    FeaturePyramid pyr = impl_->seg_encoder->encode(ad::constant(image));
    Var logits = impl_->seg_head->forward(pyr.levels[0]);
    logits = ad::upsample_nearest(logits, cfg_.encoder.strides()[0]);
    const Tensor& lv = logits->value;
    Tensor out(1, 1, lv.h(), lv.w());
    for (int y = 0; y < lv.h(); ++y)
        for (int x = 0; x < lv.w(); ++x) {
            int best = 0;
            float bv = lv.at(0, 0, y, x);
            for (int k = 1; k < lv.c(); ++k)
                if (lv.at(0, k, y, x) > bv) {
                    bv = lv.at(0, k, y, x);
                    best = k;
                }
            out.at(0, 0, y, x) = static_cast<float>(best);
        }
    return out;
}

double TrainSession::seg_accuracy_over(const SequenceDataset& data,
                                       const std::vector<size_t>& indices) const {
    int64_t hit = 0, total = 0;
    for (size_t i : indices) {
        const SampleTriplet t = data.load(i);
        const Tensor pred = predict_seg(t.target);
        for (int64_t k = 0; k < pred.size(); ++k) {
            ++total;
            if (pred.data()[k] == t.seg_mask.data()[k]) ++hit;
        }
    }
    return total > 0 ? static_cast<double>(hit) / total : 0.0;
}

CheckpointData TrainSession::snapshot() const {
    CheckpointData ckpt;
    ckpt.config = cfg_.to_json();
    ckpt.task = cfg_.task;
    ckpt.stage = cfg_.stage;
    ckpt.step = step_;
    ckpt.rng_state = rng_->state_string();
    if (cfg_.task == "teacher") {
        collect_tensors(*impl_->seg_encoder, "encoder", &ckpt.tensors);
        collect_tensors(*impl_->seg_head, "head", &ckpt.tensors);
    } else {
        collect_tensors(*impl_->depth, "depth", &ckpt.tensors);
        collect_tensors(*impl_->pose, "pose", &ckpt.tensors);
        if (impl_->joint_head) collect_tensors(*impl_->joint_head, "joint_head", &ckpt.tensors);
    }
    ckpt.has_adam = true;
    ckpt.adam_step = impl_->adam->step_count();
    ckpt.adam_m = impl_->adam->moments1();
    ckpt.adam_v = impl_->adam->moments2();
    return ckpt;
}

std::unique_ptr<Encoder> load_frozen_teacher(const fs::path& ckpt_path,
                                             EncoderConfig* cfg_out) {
    const CheckpointData ckpt = load_checkpoint(ckpt_path);
    const ExperimentConfig cfg = ExperimentConfig::from_json(ckpt.config);
    Rng rng(cfg.seed);
    auto enc = std::make_unique<Encoder>(cfg.encoder, rng);
    const std::string prefix = ckpt.task == "teacher" ? "encoder" : "depth.encoder";
    load_into(*enc, prefix, ckpt.tensors);
    enc->set_trainable(false);
    if (cfg_out) *cfg_out = cfg.encoder;
    return enc;
}

std::vector<size_t> validation_indices(size_t n, double fraction, uint64_t seed) {
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    if (fraction <= 0.0 || n < 2) return {};
    Rng rng(seed ^ 0xabcdef1234567890ull);
    for (size_t i = n - 1; i > 0; --i) {
        const size_t j = static_cast<size_t>(rng.uniform() * (i + 1));
        std::swap(idx[i], idx[j]);
    }
    size_t k = static_cast<size_t>(std::llround(fraction * static_cast<double>(n)));
    k = std::clamp<size_t>(k, 1, n - 1);
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

EvalOutcome evaluate_frames(const DepthNet& net, const SequenceDataset& data,
                            const std::vector<size_t>& indices,
                            double boundary_threshold) {
    EvalOutcome out;
    double dbe_sum = 0.0;
    for (size_t i : indices) {
        const SampleTriplet t = data.load(i);
        if (!t.has_gt_depth())
            throw Error("evaluation needs gt_depth; entry \"" + t.name + "\" has none");
        DepthPrediction pred = net.predict(ad::constant(t.target));
        FrameEval fe;
        fe.name = t.name;
        fe.metrics = standard_metrics(pred.depth->value, t.gt_depth, true, t.name);
        bool defined = false;
        const double dbe =
            dbe_accuracy(pred.depth->value, t.gt_depth, boundary_threshold, &defined);
        fe.metrics.dbe_defined = defined;
        fe.metrics.dbe_acc = dbe;
        if (defined)
            dbe_sum += dbe;
        else
            ++out.dbe_undefined_frames;
        out.abs_rel += fe.metrics.abs_rel;
        out.rmse += fe.metrics.rmse;
        out.delta1 += fe.metrics.delta1;
        out.delta2 += fe.metrics.delta2;
        out.delta3 += fe.metrics.delta3;
        out.n_valid += fe.metrics.n_valid;
        out.rows.push_back(std::move(fe));
    }
    out.frames = static_cast<int64_t>(out.rows.size());
    if (out.frames == 0) throw Error("evaluation over zero frames");
    out.abs_rel /= out.frames;
    out.rmse /= out.frames;
    out.delta1 /= out.frames;
    out.delta2 /= out.frames;
    out.delta3 /= out.frames;
    const int64_t defined_frames = out.frames - out.dbe_undefined_frames;
    out.dbe_acc = defined_frames > 0 ? dbe_sum / defined_frames : 0.0;
    return out;
}

json eval_report_json(const EvalOutcome& e) {
    json j;
    j["abs_rel"] = e.abs_rel;
    j["rmse"] = e.rmse;
    j["delta1"] = e.delta1;
    j["delta2"] = e.delta2;
    j["delta3"] = e.delta3;
    if (e.frames - e.dbe_undefined_frames > 0)
        j["dbe_acc"] = e.dbe_acc;
    else
        j["dbe_acc"] = nullptr;
    j["frames"] = e.frames;
    j["dbe_undefined_frames"] = e.dbe_undefined_frames;
    j["n_valid"] = e.n_valid;
    return j;
}

std::string eval_frames_csv(const EvalOutcome& e) {
    std::ostringstream os;
    os << "frame,abs_rel,rmse,delta1,delta2,delta3,dbe_acc,n_valid\n";
    for (const FrameEval& f : e.rows) {
        os << f.name << "," << f.metrics.abs_rel << "," << f.metrics.rmse << ","
           << f.metrics.delta1 << "," << f.metrics.delta2 << "," << f.metrics.delta3
           << ",";
        if (f.metrics.dbe_defined) os << f.metrics.dbe_acc;
        os << "," << f.metrics.n_valid << "\n";
    }
    return os.str();
}

EvalOutcome evaluate_checkpoint(const fs::path& ckpt_path, const fs::path& manifest_path,
                                const std::optional<fs::path>& out_dir,
                                double boundary_threshold) {
    const CheckpointData ckpt = load_checkpoint(ckpt_path);
    if (ckpt.task != "depth")
        throw Error("evaluation needs a depth checkpoint, got task \"" + ckpt.task + "\"");
    TrainSession session(ckpt);
    SequenceDataset data(manifest_path, session.config().image_height,
                         session.config().image_width);
    std::vector<size_t> all(data.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = i;
    EvalOutcome out = evaluate_frames(session.depth(), data, all, boundary_threshold);
    if (out_dir) {
        fs::create_directories(*out_dir);
        io::atomic_write_text(*out_dir / "report.json", eval_report_json(out).dump(2) + "\n");
        io::atomic_write_text(*out_dir / "frames.csv", eval_frames_csv(out));
    }
    return out;
}

namespace {

json log_line(int64_t step, const LossBundle& b, float lr) {
    json j;
    j["step"] = step;
    j["stage"] = b.stage;
    j["view"] = b.view;
    j["geo"] = b.geo;
    if (b.bnd_present)
        j["bnd"] = b.bnd;
    else
        j["bnd"] = nullptr;
    if (b.sem_present)
        j["sem"] = b.sem;
    else
        j["sem"] = nullptr;
    if (b.joint_present) j["joint_seg"] = b.joint_seg;
    j["total"] = b.total;
    j["lr"] = lr;
    return j;
}

}  // namespace

TrainOutcome train(const ExperimentConfig& cfg, const fs::path& out_dir) {
    cfg.validate();
    if (cfg.train_manifest.empty()) throw ConfigError("data.train_manifest is required");
    fs::create_directories(out_dir);

    SequenceDataset data(cfg.train_manifest, cfg.image_height, cfg.image_width);
    const std::vector<size_t> val_idx =
        cfg.task == "teacher" ? std::vector<size_t>{}
                              : validation_indices(data.size(), cfg.val_fraction, cfg.seed);
    std::vector<size_t> train_idx;
    for (size_t i = 0; i < data.size(); ++i)
        if (std::find(val_idx.begin(), val_idx.end(), i) == val_idx.end())
            train_idx.push_back(i);
    if (train_idx.empty()) throw Error("no training entries after the validation split");

    TrainSession session(cfg);
    const uint64_t teacher_before = session.teacher_hash();

    const int64_t steps_per_epoch =
        (static_cast<int64_t>(train_idx.size()) + cfg.batch_size - 1) / cfg.batch_size;
    const int64_t total_steps =
        cfg.max_steps > 0 ? cfg.max_steps : steps_per_epoch * cfg.epochs;

    const fs::path log_tmp = out_dir / "train_log.jsonl.tmp";
    const fs::path log_path = out_dir / "train_log.jsonl";
    std::ofstream log(log_tmp, std::ios::trunc);
    if (!log) throw IoError("cannot open " + log_tmp.string());

    TrainOutcome outcome;
    outcome.best_val_abs_rel = std::numeric_limits<double>::infinity();
    const fs::path best_path = out_dir / "best.ckpt";
    const fs::path last_path = out_dir / "last.ckpt";

    auto run_validation = [&]() {
        if (cfg.task == "teacher") return;
        const std::vector<size_t>& idx = val_idx.empty() ? train_idx : val_idx;
        bool have_gt = true;
        for (size_t i : idx)
            if (!data.entry_has_gt(i)) have_gt = false;
        if (!have_gt) return;
        EvalOutcome ev = evaluate_frames(session.depth(), data, idx);
        json j;
        j["step"] = session.step();
        j["val_abs_rel"] = ev.abs_rel;
        j["val_dbe_acc"] =
            ev.frames - ev.dbe_undefined_frames > 0 ? json(ev.dbe_acc) : json(nullptr);
        log << j.dump() << "\n";
        outcome.validated = true;
        if (ev.abs_rel < outcome.best_val_abs_rel) {
            outcome.best_val_abs_rel = ev.abs_rel;
            save_checkpoint(best_path, session.snapshot());
        }
    };

    std::vector<size_t> order = train_idx;
    size_t cursor = order.size();  // forces a reshuffle on first use
    auto next_batch = [&]() {
        std::vector<SampleTriplet> batch;
        for (int b = 0; b < cfg.batch_size; ++b) {
            if (cursor >= order.size()) {
                // deterministic per-epoch shuffle from the session RNG
                for (size_t i = order.size() - 1; i > 0; --i) {
                    const size_t j =
                        static_cast<size_t>(session.rng().uniform() * (i + 1));
                    std::swap(order[i], order[j]);
                }
                cursor = 0;
            }
            batch.push_back(data.load(order[cursor++]));
        }
        return batch;
    };

    std::vector<size_t> all_idx(data.size());
    for (size_t i = 0; i < all_idx.size(); ++i) all_idx[i] = i;

    while (session.step() < total_steps) {
        const std::vector<SampleTriplet> batch = next_batch();
        const LossBundle b = session.train_batch(batch);
        if (cfg.task == "teacher") {
            json j;
            j["step"] = session.step();
            j["ce"] = b.total;
            if (session.step() % cfg.val_interval == 0 ||
                session.step() == total_steps)
                j["seg_acc"] = session.seg_accuracy_over(data, all_idx);
            log << j.dump() << "\n";
        } else {
            log << log_line(session.step(), b, cfg.learning_rate).dump() << "\n";
        }
        if (session.step() % cfg.val_interval == 0 || session.step() == total_steps)
            run_validation();
    }
    if (session.step() % cfg.val_interval != 0) run_validation();

    save_checkpoint(last_path, session.snapshot());
    if (!outcome.validated) {
        save_checkpoint(best_path, session.snapshot());
        outcome.best_val_abs_rel = 0.0;
    }

    if (session.teacher()) {
        if (session.teacher_hash() != teacher_before)
            throw Error("teacher weights changed during stage-2 training");
        json j;
        j["teacher_hash_unchanged"] = true;
        log << j.dump() << "\n";
    }

    log.close();
    std::error_code ec;
    fs::rename(log_tmp, log_path, ec);
    if (ec) throw IoError("failed to finalize " + log_path.string());

    outcome.best_checkpoint = best_path;
    outcome.last_checkpoint = last_path;
    outcome.log_path = log_path;
    outcome.steps = session.step();
    return outcome;
}

}  // namespace crisp
