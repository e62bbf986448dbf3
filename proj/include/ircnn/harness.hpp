#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ircnn/data.hpp"
#include "ircnn/init.hpp"
#include "ircnn/model.hpp"
#include "ircnn/optim.hpp"

namespace ircnn {

enum class ValidationSource { holdout, test_as_val };

struct DatasetConfig {
    std::string name = "mnist";
    std::size_t train_subset = 0;  // first N training samples; 0 = all
    ValidationSource validation = ValidationSource::holdout;
    double holdout_fraction = 0.1;
    std::size_t val_subset = 0;  // first N validation samples; 0 = all
};

enum class InitKind { baseline, lsuv };

struct RunConfig {
    int version = 1;
    ModelConfig model;
    DatasetConfig dataset;
    OptimizerConfig optimizer;
    InitKind init = InitKind::baseline;
    std::size_t lsuv_probe = 128;
    LsuvConfig lsuv;
    AugmentConfig augment;
    std::size_t epochs = 1;
    std::size_t batch_size = 128;
    std::uint64_t seed = 0;
    bool timing = true;  // false writes epoch_time_s as 0 so metrics files can be compared bytewise
    std::string out_dir;

    void validate() const;
};

/// Parses a run config. "model" is either an inline object or a path
/// resolved relative to `base_dir`; optional "variant" and "steps" override
/// the model's. "seed" is required.
RunConfig run_config_from_json(const std::string& text, const std::string& base_dir = ".");
RunConfig load_run_config(const std::string& path);
/// Canonical JSON with the model config inlined.
std::string run_config_to_json(const RunConfig& cfg);

/// Normalized training and validation sets exactly as a run sees them.
struct PreparedData {
    Dataset train;
    Dataset val;
    Dataset test;  // empty unless requested
    NormStats stats;
};

PreparedData prepare_data(const RunConfig& cfg, const std::string& data_dir, bool with_test = false);

inline constexpr const char* kMetricsHeader =
    "epoch,train_loss,train_acc,val_loss,val_acc,epoch_time_s,effective_lr,eve_d";

struct MetricsRow {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
    double epoch_time_s = 0.0;
    double effective_lr = 0.0;
    std::optional<double> eve_d;

    std::string csv() const;
};

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
    double error_pct = 0.0;
    std::size_t samples = 0;
    std::vector<std::size_t> class_count;
    std::vector<std::size_t> class_correct;

    double class_accuracy(std::size_t k) const;
};

/// Infer-mode pass over every sample; loss is the sample-weighted mean.
template <typename T>
EvalResult evaluate(LayerGraph<T>& graph, const Dataset& ds, std::size_t batch);

struct TrainOptions {
    std::string data_dir;
    bool resume = false;                // continue from out_dir/checkpoint.bin
    std::size_t stop_after_epoch = 0;   // stop once this many epochs are complete; 0 = run to the end
    const std::atomic<bool>* interrupt = nullptr;  // checked between batches
    bool quiet = false;
};

struct TrainResult {
    std::string status;  // completed, stopped, interrupted
    std::size_t epochs_completed = 0;
    std::vector<MetricsRow> rows;  // rows produced by this invocation
    std::size_t params = 0;
    LsuvReport lsuv;
};

/// Writes out_dir/metrics.csv (one flushed row per epoch), checkpoint.bin
/// after every epoch, and summary.json. A non-finite loss records the failing
/// epoch and batch in the summary and throws TrainingError.
TrainResult run_training(const RunConfig& cfg, const TrainOptions& opts);

/// Loads checkpoint.bin (or any checkpoint path), rebuilds the model and the
/// requested split ("train", "val" or "test") as the run saw it.
EvalResult evaluate_checkpoint(const std::string& checkpoint_path, const std::string& split,
                               const std::string& data_dir);

struct GradcheckOptions {
    std::size_t coords = 200;
    double step = 1e-5;
    double tolerance = 1e-4;
    std::size_t batch = 2;
    std::size_t height = 8;  // spatial size of the random probe input
    std::size_t width = 8;
    std::size_t max_params = 50000;
    std::string corrupt;  // negate this tensor's analytic gradient (fault injection)
};

struct GradcheckEntry {
    std::string param;
    std::size_t checked = 0;
    std::size_t at_kinks = 0;  // coordinates whose +-step straddles a ReLU/max-pool switch; excluded
    double max_rel_error = 0.0;
    bool pass = false;
};

struct GradcheckReport {
    std::vector<GradcheckEntry> entries;
    bool pass() const;
    std::string str() const;
};

/// Central differences against the analytic backward at f64 on a random
/// batch, with dropout masks held fixed across evaluations. A tensor passes
/// when every compared coordinate is within tolerance and at least one
/// coordinate was compared.
GradcheckReport gradcheck(const ModelConfig& cfg, std::uint64_t seed, const GradcheckOptions& opts = {});

/// Relative error |a - n| / max(|a|, |n|, 1e-6).
double relative_error(double analytic, double numeric);

struct VariantCounts {
    std::size_t ircnn = 0;
    std::size_t ein = 0;
    std::size_t eirn = 0;
    bool parity() const { return ircnn == ein; }
};

VariantCounts compare_variants(const ModelConfig& cfg);
std::string params_table(const ModelConfig& cfg);

struct LinearBaseline {
    double val_accuracy = 0.0;
    double val_loss = 0.0;
};

/// Multinomial logistic regression over flattened pixels, trained with the
/// same batching and SGD code as the CNN.
LinearBaseline train_linear_baseline(const Dataset& train, const Dataset& val, std::size_t epochs,
                                     std::size_t batch, const SgdConfig& sgd, std::uint64_t seed);

} // namespace ircnn
