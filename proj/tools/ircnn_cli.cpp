// ircnn: train, eval, gradcheck and params commands.

#include <atomic>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "ircnn/harness.hpp"

namespace {

std::atomic<bool> g_interrupt{false};

extern "C" void on_sigint(int) { g_interrupt.store(true); }

std::string data_dir_or_env(const std::string& flag) {
    if (!flag.empty()) return flag;
    const char* env = std::getenv("IRCNN_DATA_DIR");
    return env ? env : "";
}

// Accepts either a model config or a run config (whose model is used).
ircnn::ModelConfig load_any_model_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ircnn::IoError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(ss.str());
    } catch (const nlohmann::json::parse_error& e) {
        throw ircnn::ConfigError("'" + path + "' is not valid JSON: " + e.what());
    }
    if (j.contains("model")) return ircnn::load_run_config(path).model;
    return ircnn::model_config_from_json(ss.str());
}

void apply_variant(ircnn::ModelConfig& cfg, const std::string& variant) {
    if (!variant.empty()) cfg.variant = ircnn::parse_variant(variant);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Inception-recurrent CNN trainer"};
    app.require_subcommand(1);

    std::string config, data_dir, out_dir, variant, checkpoint, split = "val", corrupt;
    std::uint64_t seed = 0;
    bool resume = false, compare = false, quiet = false, json_out = false;
    std::size_t stop_after = 0, epochs = 0, steps = 0, coords = 200, size = 8;

    CLI::App* train = app.add_subcommand("train", "train a model from a run config");
    train->add_option("--config", config, "run config (JSON)")->required();
    train->add_option("--data-dir", data_dir, "dataset root (default: $IRCNN_DATA_DIR)");
    train->add_option("--out-dir", out_dir, "output directory (overrides the config)");
    CLI::Option* train_seed = train->add_option("--seed", seed, "seed (overrides the config)");
    train->add_option("--variant", variant, "ircnn, ein or eirn (overrides the config)");
    train->add_option("--epochs", epochs, "epoch count (overrides the config)");
    train->add_flag("--resume", resume, "continue from <out-dir>/checkpoint.bin");
    train->add_option("--stop-after", stop_after, "stop once this many epochs are complete");
    train->add_flag("--quiet", quiet, "no per-epoch progress on stderr");

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--checkpoint", checkpoint, "checkpoint file");
    eval->add_option("--out-dir", out_dir, "run directory holding checkpoint.bin");
    eval->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
    eval->add_option("--data-dir", data_dir, "dataset root (default: $IRCNN_DATA_DIR)");
    eval->add_flag("--json", json_out, "print JSON");

    CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference check of every parameter gradient");
    gc->add_option("--config", config, "model or run config")->required();
    gc->add_option("--seed", seed, "seed");
    gc->add_option("--variant", variant, "ircnn, ein or eirn");
    gc->add_option("--steps", steps, "recurrence steps for every block");
    gc->add_option("--coords", coords, "sampled coordinates per kernel tensor");
    gc->add_option("--size", size, "spatial size of the probe input");
    gc->add_option("--corrupt", corrupt, "negate this parameter's analytic gradient");

    CLI::App* params = app.add_subcommand("params", "parameter counts");
    params->add_option("--config", config, "model or run config")->required();
    params->add_option("--variant", variant, "ircnn, ein or eirn");
    params->add_flag("--compare-variants", compare, "check ircnn/ein parity and report the eirn delta");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) {
            ircnn::RunConfig cfg = ircnn::load_run_config(config);
            apply_variant(cfg.model, variant);
            if (*train_seed) cfg.seed = seed;
            if (!out_dir.empty()) cfg.out_dir = out_dir;
            if (epochs > 0) cfg.epochs = epochs;
            std::signal(SIGINT, on_sigint);
            ircnn::TrainOptions opts;
            opts.data_dir = data_dir_or_env(data_dir);
            opts.resume = resume;
            opts.stop_after_epoch = stop_after;
            opts.interrupt = &g_interrupt;
            opts.quiet = quiet;
            const ircnn::TrainResult r = ircnn::run_training(cfg, opts);
            std::printf("%s after %zu epochs (%zu parameters)\n", r.status.c_str(), r.epochs_completed, r.params);
            if (!r.rows.empty()) {
                const ircnn::MetricsRow& last = r.rows.back();
                std::printf("val_loss %.17g\nval_acc %.17g\n", last.val_loss, last.val_acc);
            }
            return r.status == "interrupted" ? 130 : 0;
        }
        if (eval->parsed()) {
            if (checkpoint.empty()) {
                if (out_dir.empty()) throw ircnn::ConfigError("eval needs --checkpoint or --out-dir");
                checkpoint = (std::filesystem::path(out_dir) / "checkpoint.bin").string();
            }
            const ircnn::EvalResult r = ircnn::evaluate_checkpoint(checkpoint, split, data_dir_or_env(data_dir));
            if (json_out) {
                nlohmann::json j = {{"split", split},       {"samples", r.samples}, {"loss", r.loss},
                                    {"accuracy", r.accuracy}, {"error_pct", r.error_pct}};
                nlohmann::json per = nlohmann::json::array();
                for (std::size_t k = 0; k < r.class_count.size(); ++k) {
                    per.push_back({{"class", k}, {"count", r.class_count[k]}, {"accuracy", r.class_accuracy(k)}});
                }
                j["per_class"] = per;
                std::cout << j.dump(2) << "\n";
            } else {
                std::printf("split %s\nsamples %zu\nloss %.17g\naccuracy %.17g\nerror_pct %.4f\n", split.c_str(),
                            r.samples, r.loss, r.accuracy, r.error_pct);
                for (std::size_t k = 0; k < r.class_count.size(); ++k) {
                    std::printf("class %zu  count %zu  accuracy %.4f\n", k, r.class_count[k], r.class_accuracy(k));
                }
            }
            return 0;
        }
        if (gc->parsed()) {
            ircnn::ModelConfig cfg = load_any_model_config(config);
            apply_variant(cfg, variant);
            if (steps > 0) {
                for (ircnn::StageConfig& s : cfg.stages) s.block.steps = steps;
            }
            ircnn::GradcheckOptions opts;
            opts.coords = coords;
            opts.height = opts.width = size;
            opts.corrupt = corrupt;
            const ircnn::GradcheckReport r = ircnn::gradcheck(cfg, seed, opts);
            std::fputs(r.str().c_str(), stdout);
            return r.pass() ? 0 : 3;
        }
        if (params->parsed()) {
            ircnn::ModelConfig cfg = load_any_model_config(config);
            apply_variant(cfg, variant);
            std::fputs(ircnn::params_table(cfg).c_str(), stdout);
            if (compare) {
                const ircnn::VariantCounts c = ircnn::compare_variants(cfg);
                std::printf("ircnn %zu\nein %zu\neirn %zu\nparity %s\neirn_delta %lld\n", c.ircnn, c.ein, c.eirn,
                            c.parity() ? "ok" : "FAIL",
                            static_cast<long long>(c.eirn) - static_cast<long long>(c.ein));
                return c.parity() ? 0 : 3;
            }
            return 0;
        }
    } catch (const ircnn::Error& e) {
        std::fprintf(stderr, "error: %s: %s\n", e.category().c_str(), e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: internal: %s\n", e.what());
        return 1;
    }
    return 0;
}
