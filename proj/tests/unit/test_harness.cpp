#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "ircnn/checkpoint.hpp"
#include "ircnn/harness.hpp"
#include "support.hpp"

using namespace ircnn;
using testing::TempDir;

namespace {

const std::string kConfigs = std::string(IRCNN_SOURCE_DIR) + "/configs/";

std::string run_json(const std::string& out_dir, const std::string& optimizer, std::size_t epochs) {
    return R"({"model": "tiny.json", "dataset": {"name": "mnist", "train_subset": 200, "holdout_fraction": 0.2},
              "optimizer": )" + optimizer + R"(, "epochs": )" + std::to_string(epochs) +
           R"(, "batch_size": 32, "seed": 3, "timing": false, "augment": {"horizontal_flip": true},
              "out_dir": ")" + out_dir + "\"}";
}

const char* kSgd = R"({"name": "sgd", "lr0": 0.01, "momentum": 0.9, "decay": 1e-6, "nesterov": true, "l2": 0.002})";
const char* kEve = R"({"name": "eve", "lr0": 0.001})";

// Checkpoints echo the run config, whose out_dir differs between runs.
bool same_state(const std::string& a, const std::string& b) {
    const Checkpoint<float> x = load_checkpoint<float>(a + "/checkpoint.bin");
    const Checkpoint<float> y = load_checkpoint<float>(b + "/checkpoint.bin");
    return x.epoch == y.epoch && x.params == y.params && x.optimizer == y.optimizer && x.norm == y.norm &&
           x.rng == y.rng;
}

} // namespace

TEST_SUITE("harness") {

TEST_CASE("run config parsing") {
    const RunConfig cfg = load_run_config(kConfigs + "runs/mnist_tiny.json");
    CHECK(cfg.seed == 1);
    CHECK(cfg.epochs == 5);
    CHECK(cfg.dataset.train_subset == 5000);
    CHECK(count_params(build_model<float>(cfg.model)).total == 8778);

    CHECK_THROWS_AS(run_config_from_json(R"({"model": "tiny.json"})", kConfigs), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(R"({"model": "missing.json", "seed": 1})", kConfigs), Error);
    CHECK_THROWS_AS(run_config_from_json(R"({"model": "tiny.json", "seed": 1, "optimizer": {"name": "rmsprop"}})", kConfigs),
                    ConfigError);
    CHECK_THROWS_AS(run_config_from_json("{not json", kConfigs), ConfigError);

    const RunConfig a = run_config_from_json(run_json("/tmp/x", kEve, 2), kConfigs);
    const RunConfig b = run_config_from_json(run_config_to_json(a), kConfigs);
    CHECK(run_config_to_json(a) == run_config_to_json(b));
}

TEST_CASE("training is reproducible, resumable and re-evaluable") {
    TempDir dir("harness");
    testing::write_synthetic_mnist(dir.str(), 200, 50, 4);
    TrainOptions opts;
    opts.data_dir = dir.str();
    opts.quiet = true;

    for (const char* optimizer : {kSgd, kEve}) {
        CAPTURE(optimizer);
        const RunConfig a = run_config_from_json(run_json(dir.file("a"), optimizer, 3), kConfigs);
        const RunConfig b = run_config_from_json(run_json(dir.file("b"), optimizer, 3), kConfigs);
        const RunConfig c = run_config_from_json(run_json(dir.file("c"), optimizer, 3), kConfigs);

        const TrainResult ra = run_training(a, opts);
        CHECK(ra.status == "completed");
        REQUIRE(ra.rows.size() == 3);
        run_training(b, opts);
        const std::string metrics = testing::read_text(dir.file("a") + "/metrics.csv");
        CHECK(metrics.starts_with(std::string(kMetricsHeader) + "\n"));
        CHECK(metrics == testing::read_text(dir.file("b") + "/metrics.csv"));
        CHECK(same_state(dir.file("a"), dir.file("b")));

        // Interrupted after epoch 1, then resumed: same rows as the uninterrupted run.
        TrainOptions stop = opts;
        stop.stop_after_epoch = 1;
        const TrainResult first = run_training(c, stop);
        CHECK(first.status == "stopped");
        CHECK(first.epochs_completed == 1);
        TrainOptions resume = opts;
        resume.resume = true;
        const TrainResult rest = run_training(c, resume);
        CHECK(rest.epochs_completed == 3);
        CHECK(rest.rows.size() == 2);
        CHECK(testing::read_text(dir.file("c") + "/metrics.csv") == metrics);
        CHECK(same_state(dir.file("c"), dir.file("a")));

        const EvalResult ev = evaluate_checkpoint(dir.file("a") + "/checkpoint.bin", "val", dir.str());
        CHECK(ev.samples == 40);
        CHECK(ev.accuracy == ra.rows.back().val_acc);
        CHECK(ev.loss == ra.rows.back().val_loss);

        double weighted = 0.0;
        std::size_t counted = 0;
        for (std::size_t k = 0; k < ev.class_count.size(); ++k) {
            counted += ev.class_count[k];
            if (ev.class_count[k] > 0) weighted += ev.class_accuracy(k) * static_cast<double>(ev.class_count[k]);
        }
        CHECK(counted == ev.samples);
        CHECK(weighted / static_cast<double>(ev.samples) == doctest::Approx(ev.accuracy).epsilon(1e-12));
        CHECK(ev.error_pct == doctest::Approx(100.0 * (1.0 - ev.accuracy)).epsilon(1e-12));

        std::filesystem::remove_all(dir.file("a"));
        std::filesystem::remove_all(dir.file("b"));
        std::filesystem::remove_all(dir.file("c"));
    }
}

TEST_CASE("interrupt flag stops after the current batch") {
    TempDir dir("interrupt");
    testing::write_synthetic_mnist(dir.str(), 100, 20, 5);
    const RunConfig cfg = run_config_from_json(run_json(dir.file("run"), kSgd, 2), kConfigs);
    std::atomic<bool> flag{true};
    TrainOptions opts;
    opts.data_dir = dir.str();
    opts.quiet = true;
    opts.interrupt = &flag;
    const TrainResult r = run_training(cfg, opts);
    CHECK(r.status == "interrupted");
    CHECK(r.epochs_completed == 0);
}

TEST_CASE("gradcheck passes for every variant and catches a corrupted gradient") {
    for (Variant v : {Variant::ircnn, Variant::ein, Variant::eirn}) {
        ModelConfig cfg = load_model_config(kConfigs + "tiny.json");
        cfg.variant = v;
        GradcheckOptions opts;
        opts.coords = 40;
        const GradcheckReport r = gradcheck(cfg, 7, opts);
        CAPTURE(r.str());
        CHECK(r.pass());
        CHECK_FALSE(r.entries.empty());
    }
    ModelConfig cfg = load_model_config(kConfigs + "tiny.json");
    GradcheckOptions opts;
    opts.coords = 40;
    opts.corrupt = "stem.conv.w";
    const GradcheckReport r = gradcheck(cfg, 7, opts);
    CHECK_FALSE(r.pass());
    for (const GradcheckEntry& e : r.entries) {
        if (e.param == "stem.conv.w") CHECK(e.max_rel_error > 0.1);
    }
}

TEST_CASE("relative error definition") {
    CHECK(relative_error(1.0, 1.0) == 0.0);
    CHECK(relative_error(2.0, 1.0) == 0.5);
    CHECK(relative_error(0.0, 0.0) == 0.0);
    CHECK(relative_error(1e-9, 0.0) == doctest::Approx(1e-3));
}

TEST_CASE("params table lists every variant") {
    const ModelConfig cfg = load_model_config(kConfigs + "tiny.json");
    const std::string table = params_table(cfg);
    CHECK(table.find("8778") != std::string::npos);
    CHECK(compare_variants(cfg).parity());
}

TEST_CASE("linear baseline learns separable synthetic digits") {
    TempDir dir("linear");
    testing::write_synthetic_mnist(dir.str(), 300, 100, 6);
    Dataset train = load_dataset("mnist", dir.str(), Split::train);
    Dataset val = load_dataset("mnist", dir.str(), Split::test);
    const NormStats st = compute_stats(train);
    normalize(train, st);
    normalize(val, st);
    SgdConfig sgd;
    sgd.lr0 = 0.01;
    const LinearBaseline lb = train_linear_baseline(train, val, 5, 32, sgd, 1);
    CHECK(lb.val_accuracy > 0.9);
    CHECK(std::isfinite(lb.val_loss));
}

} // TEST_SUITE
