#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "crispdepth/image_io.hpp"
#include "crispdepth/trainer.hpp"

using namespace crisp;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

SceneSpec tiny_scene(int frames = 4) {
    SceneSpec s;
    s.width = s.height = 32;
    s.intrinsics = {32, 32, 15.5, 15.5};
    s.frames = frames;
    s.seed = 21;
    s.cam_step = {0.0, 0.04, 0.0};
    s.texture_scale = 1.0;
    s.texture_amplitude = 0.3;
    s.texture_octaves = 2;
    SceneObject left, right;
    left.type = SceneObject::Type::kPlane;
    left.corner = {-6.0, -6.0, 2.0};
    left.edge_u = {6.0, 0.0, 0.0};
    left.edge_v = {0.0, 12.0, 0.0};
    right.type = SceneObject::Type::kPlane;
    right.corner = {0.0, -6.0, 3.0};
    right.edge_u = {6.0, 0.0, 0.0};
    right.edge_v = {0.0, 12.0, 0.0};
    s.objects = {left, right};
    return s;
}

ExperimentConfig tiny_config(const fs::path& manifest) {
    ExperimentConfig cfg;
    cfg.encoder.stage_channels = {8, 10, 12, 12, 12};
    cfg.encoder.paths_per_stage = 1;
    cfg.pose.channels = {8, 8, 12, 12, 16, 16, 16};
    cfg.decoder.max_depth = 10.0f;
    cfg.train_manifest = manifest.string();
    cfg.val_fraction = 0.0;
    cfg.val_interval = 1000;
    cfg.max_steps = 4;
    cfg.seed = 5;
    return cfg;
}

const fs::path& shared_dataset() {
    static fs::path manifest = [] {
        const fs::path dir = fresh_dir("crisp_trainer_data");
        return write_synthetic_dataset(tiny_scene(), dir);
    }();
    return manifest;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), {});
}

}  // namespace

TEST_CASE("checkpoint round-trip is byte-identical") {
    ExperimentConfig cfg = tiny_config(shared_dataset());
    TrainSession session(cfg);
    SequenceDataset data(shared_dataset());
    session.train_batch({data.load(0)});

    const fs::path dir = fresh_dir("crisp_ckpt_rt");
    const fs::path p1 = dir / "a.ckpt";
    const fs::path p2 = dir / "b.ckpt";
    save_checkpoint(p1, session.snapshot());
    const CheckpointData loaded = load_checkpoint(p1);
    save_checkpoint(p2, loaded);
    CHECK(file_bytes(p1) == file_bytes(p2));
}

TEST_CASE("resume reproduces the next-step loss bit for bit") {
    ExperimentConfig cfg = tiny_config(shared_dataset());
    SequenceDataset data(shared_dataset());
    const std::vector<SampleTriplet> batch{data.load(1)};

    TrainSession a(cfg);
    a.train_batch(batch);
    a.train_batch(batch);
    const CheckpointData snap = a.snapshot();
    const LossBundle next_a = a.train_batch(batch);

    TrainSession b(snap);
    const LossBundle next_b = b.train_batch(batch);
    CHECK(next_a.total == next_b.total);
    CHECK(next_a.view == next_b.view);
    CHECK(next_a.geo == next_b.geo);
    CHECK(a.step() == b.step());
}

TEST_CASE("one tiny step never increases the loss on its own batch") {
    ExperimentConfig cfg = tiny_config(shared_dataset());
    cfg.learning_rate = 1e-6f;
    TrainSession session(cfg);
    SequenceDataset data(shared_dataset());
    const SampleTriplet t = data.load(0);
    const double before = session.eval_losses(t).total;
    session.train_batch({t});
    const double after = session.eval_losses(t).total;
    CHECK(after <= before + 1e-6);
}

TEST_CASE("poisoned weights abort with step diagnostics") {
    ExperimentConfig cfg = tiny_config(shared_dataset());
    TrainSession session(cfg);
    SequenceDataset data(shared_dataset());
    auto params = session.depth().named_parameters();
    params.front().second->value.data()[0] = std::nanf("");
    CHECK_THROWS_WITH_AS(session.train_batch({data.load(0)}),
                         doctest::Contains("non-finite"), Error);
}

TEST_CASE("training writes logs whose totals recombine from the terms") {
    ExperimentConfig cfg = tiny_config(shared_dataset());
    const fs::path out = fresh_dir("crisp_train_run");
    const TrainOutcome outcome = train(cfg, out);
    CHECK(outcome.steps == 4);
    CHECK(fs::exists(outcome.best_checkpoint));
    CHECK(fs::exists(outcome.last_checkpoint));

    std::ifstream log(outcome.log_path);
    REQUIRE(log.good());
    std::string line;
    int steps_seen = 0;
    while (std::getline(log, line)) {
        const json j = json::parse(line);
        if (!j.count("view")) continue;
        ++steps_seen;
        const double total = j["total"].get<double>();
        double recombined = cfg.loss.alpha * j["view"].get<double>() +
                            cfg.loss.beta * j["geo"].get<double>();
        if (!j["bnd"].is_null()) recombined += cfg.loss.gamma * j["bnd"].get<double>();
        if (!j["sem"].is_null()) recombined += cfg.loss.epsilon * j["sem"].get<double>();
        CHECK(std::fabs(total - recombined) < 1e-7);
    }
    CHECK(steps_seen == 4);
}

TEST_CASE("gamma zero gates the boundary term out of the log") {
    ExperimentConfig cfg = tiny_config(shared_dataset());
    cfg.loss.gamma = 0.0f;
    cfg.max_steps = 2;
    const fs::path out = fresh_dir("crisp_train_gamma0");
    const TrainOutcome outcome = train(cfg, out);
    std::ifstream log(outcome.log_path);
    std::string line;
    while (std::getline(log, line)) {
        const json j = json::parse(line);
        if (j.count("bnd")) CHECK(j["bnd"].is_null());
    }
}

TEST_CASE("identical config and seed reproduce logs and checkpoints byte for byte") {
    ExperimentConfig cfg = tiny_config(shared_dataset());
    cfg.max_steps = 3;
    const fs::path out_a = fresh_dir("crisp_det_a");
    const fs::path out_b = fresh_dir("crisp_det_b");
    const TrainOutcome a = train(cfg, out_a);
    const TrainOutcome b = train(cfg, out_b);
    CHECK(file_bytes(a.log_path) == file_bytes(b.log_path));
    CHECK(file_bytes(a.last_checkpoint) == file_bytes(b.last_checkpoint));
}

TEST_CASE("teacher preparation reaches high pixel accuracy and freezes cleanly") {
    ExperimentConfig cfg = tiny_config(shared_dataset());
    cfg.task = "teacher";
    cfg.learning_rate = 3e-3f;
    cfg.max_steps = 60;
    cfg.val_interval = 30;
    const fs::path out = fresh_dir("crisp_teacher_run");
    const TrainOutcome outcome = train(cfg, out);

    TrainSession check(load_checkpoint(outcome.last_checkpoint));
    SequenceDataset data(shared_dataset());
    std::vector<size_t> all(data.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = i;
    const double acc = check.seg_accuracy_over(data, all);
    MESSAGE("teacher pixel accuracy: ", acc);
    CHECK(acc >= 0.9);

    auto teacher = load_frozen_teacher(outcome.last_checkpoint);
    CHECK(count_parameters(*teacher) == 0);  // nothing trainable
    CHECK(teacher->parameter_count(false) > 0);
    // frozen outputs are constant across unrelated training steps
    const Tensor img = data.load(0).target;
    const Tensor before = teacher->encode(ad::constant(img)).levels[4]->value;
    const uint64_t hash_before = teacher->weights_hash();
    TrainSession other(tiny_config(shared_dataset()));
    other.train_batch({data.load(0)});
    CHECK(teacher->weights_hash() == hash_before);
    CHECK(before == teacher->encode(ad::constant(img)).levels[4]->value);
}

TEST_CASE("stage 2 wiring") {
    const fs::path stage1_out = fresh_dir("crisp_stage1_out");
    ExperimentConfig cfg1 = tiny_config(shared_dataset());
    cfg1.max_steps = 2;
    const TrainOutcome s1 = train(cfg1, stage1_out);

    SUBCASE("teacher equal to the student encoder starts at zero semantic loss") {
        ExperimentConfig cfg2 = tiny_config(shared_dataset());
        cfg2.stage = 2;
        cfg2.stage1_checkpoint = s1.last_checkpoint.string();
        cfg2.teacher_checkpoint = s1.last_checkpoint.string();  // frozen copy of itself
        TrainSession session(cfg2);
        SequenceDataset data(shared_dataset());
        const LossBundle b = session.eval_losses(data.load(0));
        CHECK(b.sem_present);
        CHECK(b.sem == doctest::Approx(0.0).epsilon(1e-5));
        CHECK(b.stage == 2);
    }
    SUBCASE("stage-2 training keeps the teacher untouched and logs sem in range") {
        ExperimentConfig cfg2 = tiny_config(shared_dataset());
        cfg2.stage = 2;
        cfg2.max_steps = 3;
        cfg2.stage1_checkpoint = s1.last_checkpoint.string();
        cfg2.teacher_checkpoint = s1.last_checkpoint.string();
        const fs::path out2 = fresh_dir("crisp_stage2_out");
        const TrainOutcome s2 = train(cfg2, out2);
        std::ifstream log(s2.log_path);
        std::string line;
        bool teacher_checked = false;
        while (std::getline(log, line)) {
            const json j = json::parse(line);
            if (j.count("sem") && !j["sem"].is_null()) {
                CHECK(j["sem"].get<double>() >= 0.0);
                CHECK(j["sem"].get<double>() <= 2.0);
            }
            if (j.count("teacher_hash_unchanged"))
                teacher_checked = j["teacher_hash_unchanged"].get<bool>();
        }
        CHECK(teacher_checked);
    }
    SUBCASE("stage 2 without checkpoints is rejected") {
        ExperimentConfig cfg2 = tiny_config(shared_dataset());
        cfg2.stage = 2;
        CHECK_THROWS_AS(cfg2.validate(), ConfigError);
    }
    SUBCASE("shape-incompatible teacher is rejected before training") {
        ExperimentConfig other = tiny_config(shared_dataset());
        other.encoder.stage_channels = {6, 8, 10, 10, 10};
        other.max_steps = 1;
        const fs::path out_other = fresh_dir("crisp_other_encoder");
        const TrainOutcome mismatched = train(other, out_other);

        ExperimentConfig cfg2 = tiny_config(shared_dataset());
        cfg2.stage = 2;
        cfg2.stage1_checkpoint = s1.last_checkpoint.string();
        cfg2.teacher_checkpoint = mismatched.last_checkpoint.string();
        CHECK_THROWS_WITH_AS([&] { TrainSession s(cfg2); }(),
                             doctest::Contains("shape-compatible"), ShapeError);
    }
    SUBCASE("semantic loss can be pulled into stage 1 for the ablation") {
        ExperimentConfig cfg2 = tiny_config(shared_dataset());
        cfg2.semantic_loss_in_stage1 = true;
        cfg2.teacher_checkpoint = s1.last_checkpoint.string();
        TrainSession session(cfg2);
        SequenceDataset data(shared_dataset());
        const LossBundle b = session.eval_losses(data.load(0));
        CHECK(b.sem_present);
        CHECK(b.stage == 1);
    }
}

TEST_CASE("joint semantic decoder ablation trains and logs its term") {
    ExperimentConfig cfg = tiny_config(shared_dataset());
    cfg.joint_semantic_decoder = true;
    cfg.max_steps = 2;
    const fs::path out = fresh_dir("crisp_joint_run");
    const TrainOutcome outcome = train(cfg, out);
    std::ifstream log(outcome.log_path);
    std::string line;
    int rows = 0;
    while (std::getline(log, line)) {
        const json j = json::parse(line);
        if (!j.count("view")) continue;
        ++rows;
        REQUIRE(j.count("joint_seg"));
        const double recombined =
            cfg.loss.alpha * j["view"].get<double>() +
            cfg.loss.beta * j["geo"].get<double>() +
            (j["bnd"].is_null() ? 0.0 : cfg.loss.gamma * j["bnd"].get<double>()) +
            cfg.joint_seg_weight * j["joint_seg"].get<double>();
        CHECK(std::fabs(j["total"].get<double>() - recombined) < 1e-7);
    }
    CHECK(rows == 2);
}

TEST_CASE("pretrained encoder initialization copies teacher weights") {
    // teacher checkpoint to borrow the encoder from
    ExperimentConfig tcfg = tiny_config(shared_dataset());
    tcfg.task = "teacher";
    tcfg.max_steps = 2;
    const fs::path tout = fresh_dir("crisp_pretrain_teacher");
    const TrainOutcome teacher = train(tcfg, tout);

    ExperimentConfig cfg = tiny_config(shared_dataset());
    cfg.pretrained_init = true;
    cfg.pretrained_path = teacher.last_checkpoint.string();
    TrainSession session(cfg);

    auto borrowed = load_frozen_teacher(teacher.last_checkpoint);
    CHECK(session.depth().encoder().weights_hash() == borrowed->weights_hash());

    ExperimentConfig bad = cfg;
    bad.pretrained_path.clear();
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("batches accumulate gradients over several triplets") {
    ExperimentConfig cfg = tiny_config(shared_dataset());
    cfg.batch_size = 2;
    TrainSession session(cfg);
    SequenceDataset data(shared_dataset());
    const LossBundle b = session.train_batch({data.load(0), data.load(1)});
    CHECK(std::isfinite(b.total));
    CHECK(session.step() == 1);
}

TEST_CASE("validation split is deterministic and bounded") {
    const auto a = validation_indices(20, 0.1, 7);
    const auto b = validation_indices(20, 0.1, 7);
    CHECK(a == b);
    CHECK(a.size() == 2);
    CHECK(validation_indices(20, 0.0, 7).empty());
    CHECK(validation_indices(3, 0.5, 9).size() < 3);
    CHECK(!validation_indices(2, 0.1, 9).empty());
}

TEST_CASE("evaluation produces stable reports") {
    ExperimentConfig cfg = tiny_config(shared_dataset());
    cfg.max_steps = 2;
    const fs::path out = fresh_dir("crisp_eval_train");
    const TrainOutcome t = train(cfg, out);

    const fs::path eval_out = fresh_dir("crisp_eval_out");
    const EvalOutcome e =
        evaluate_checkpoint(t.last_checkpoint, shared_dataset(), eval_out);
    CHECK(e.frames == 3);
    CHECK(e.n_valid > 0);
    CHECK(e.delta1 <= e.delta2);
    CHECK(e.delta2 <= e.delta3);

    const json report = json::parse(file_bytes(eval_out / "report.json"));
    for (const char* key : {"abs_rel", "rmse", "delta1", "delta2", "delta3", "dbe_acc",
                            "frames", "dbe_undefined_frames", "n_valid"})
        CHECK(report.contains(key));
    const std::string csv = file_bytes(eval_out / "frames.csv");
    CHECK(csv.rfind("frame,abs_rel,rmse", 0) == 0);

    // two evaluations agree exactly
    const EvalOutcome e2 =
        evaluate_checkpoint(t.last_checkpoint, shared_dataset(), std::nullopt);
    CHECK(e.abs_rel == e2.abs_rel);
    CHECK(e.rmse == e2.rmse);
}
