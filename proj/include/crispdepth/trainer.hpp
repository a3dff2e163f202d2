#pragma once

#include <filesystem>
#include <memory>
#include <optional>

#include "crispdepth/checkpoint.hpp"
#include "crispdepth/config.hpp"
#include "crispdepth/data.hpp"
#include "crispdepth/metrics.hpp"

namespace crisp {

struct TrainOutcome {
    std::filesystem::path best_checkpoint;
    std::filesystem::path last_checkpoint;
    std::filesystem::path log_path;
    double best_val_abs_rel = 0.0;
    bool validated = false;
    int64_t steps = 0;
};

// Owns the networks, optimizer and RNG for one training run. Fresh sessions
// are seeded from the config; resumed sessions restore weights, optimizer
// moments, RNG state and the step counter from a checkpoint.
class TrainSession {
public:
    explicit TrainSession(const ExperimentConfig& cfg);
    explicit TrainSession(const CheckpointData& ckpt);
    ~TrainSession();

    // one optimizer step over a batch of triplets; returns the mean bundle
    LossBundle train_batch(const std::vector<SampleTriplet>& batch);
    // forward-only loss evaluation (no gradient step)
    LossBundle eval_losses(const SampleTriplet& t);

    CheckpointData snapshot() const;

    DepthNet& depth();
    PoseNet& pose();
    const Encoder* teacher() const;
    uint64_t teacher_hash() const;
    int64_t step() const { return step_; }
    Rng& rng() { return *rng_; }
    const ExperimentConfig& config() const { return cfg_; }

    // prediction for evaluation paths
    DepthPrediction predict(const Tensor& image) const;

    // teacher task: argmax class map and pixel accuracy
    Tensor predict_seg(const Tensor& image) const;
    double seg_accuracy_over(const SequenceDataset& data,
                             const std::vector<size_t>& indices) const;

private:
    struct Impl;
    LossBundle sample_losses(const SampleTriplet& t, bool& used_sem);
    ExperimentConfig cfg_;
    std::unique_ptr<Rng> rng_;
    std::unique_ptr<Impl> impl_;
    int64_t step_ = 0;
    bool warned_missing_pseudo_ = false;
};

// Dispatches on cfg.task/stage: depth stage 1, depth stage 2 (frozen teacher,
// verified unchanged), or teacher preparation on segmentation masks.
TrainOutcome train(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

// Frozen semantic encoder from a teacher (or depth) checkpoint; all weights
// are flagged non-trainable.
std::unique_ptr<Encoder> load_frozen_teacher(const std::filesystem::path& ckpt_path,
                                             EncoderConfig* cfg_out = nullptr);

struct FrameEval {
    std::string name;
    MetricReport metrics;
};

struct EvalOutcome {
    double abs_rel = 0.0, rmse = 0.0, delta1 = 0.0, delta2 = 0.0, delta3 = 0.0;
    double dbe_acc = 0.0;  // mean over frames where defined
    int64_t frames = 0;
    int64_t dbe_undefined_frames = 0;
    int64_t n_valid = 0;
    std::vector<FrameEval> rows;
};

EvalOutcome evaluate_frames(const DepthNet& net, const SequenceDataset& data,
                            const std::vector<size_t>& indices,
                            double boundary_threshold = 0.1);

// Loads the checkpoint, evaluates the dataset, and (optionally) writes
// report.json and frames.csv under out_dir.
EvalOutcome evaluate_checkpoint(const std::filesystem::path& ckpt_path,
                                const std::filesystem::path& manifest_path,
                                const std::optional<std::filesystem::path>& out_dir,
                                double boundary_threshold = 0.1);

// deterministic validation split: fraction of entries chosen by seed
std::vector<size_t> validation_indices(size_t n, double fraction, uint64_t seed);

nlohmann::json eval_report_json(const EvalOutcome& e);
std::string eval_frames_csv(const EvalOutcome& e);

}  // namespace crisp
