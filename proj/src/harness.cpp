#include "ircnn/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "ircnn/checkpoint.hpp"

namespace ircnn {

using nlohmann::json;
namespace fs = std::filesystem;

// ---- run config -------------------------------------------------------------------

void RunConfig::validate() const {
    if (version != 1) throw ConfigError("unsupported run config version " + std::to_string(version));
    if (epochs == 0) throw ConfigError("epochs must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (lsuv_probe == 0) throw ConfigError("lsuv probe size must be positive");
    if (!(lsuv.tol_var > 0.0)) throw ConfigError("lsuv tol_var must be positive");
    if (!(augment.flip_probability >= 0.0 && augment.flip_probability <= 1.0)) {
        throw ConfigError("flip probability must lie in [0, 1]");
    }
    if (dataset.validation == ValidationSource::holdout &&
        !(dataset.holdout_fraction > 0.0 && dataset.holdout_fraction < 1.0)) {
        throw ConfigError("holdout_fraction must lie in (0, 1)");
    }
    optimizer.validate();
}

namespace {

std::string read_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

template <typename V>
void maybe(const json& j, const char* key, V& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<V>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("run config field '") + key + "': " + e.what());
    }
}

json optimizer_json(const OptimizerConfig& o) {
    json j;
    j["name"] = std::string(optimizer_name(o.kind));
    j["l2"] = o.l2;
    switch (o.kind) {
    case OptimizerKind::sgd:
        j["lr0"] = o.sgd.lr0;
        j["momentum"] = o.sgd.momentum;
        j["decay"] = o.sgd.decay;
        j["nesterov"] = o.sgd.nesterov;
        break;
    case OptimizerKind::adam:
        j["lr"] = o.adam.lr;
        j["decay"] = o.adam.decay;
        j["beta1"] = o.adam.beta1;
        j["beta2"] = o.adam.beta2;
        j["eps"] = o.adam.eps;
        break;
    case OptimizerKind::eve:
        j["lr"] = o.eve.lr;
        j["decay"] = o.eve.decay;
        j["beta1"] = o.eve.beta1;
        j["beta2"] = o.eve.beta2;
        j["beta3"] = o.eve.beta3;
        j["k"] = o.eve.k;
        j["K"] = o.eve.K;
        j["eps"] = o.eve.eps;
        break;
    }
    return j;
}

OptimizerConfig optimizer_from_json(const json& j) {
    OptimizerConfig o;
    o.kind = parse_optimizer(j.value("name", std::string("sgd")));
    maybe(j, "l2", o.l2);
    switch (o.kind) {
    case OptimizerKind::sgd:
        maybe(j, "lr0", o.sgd.lr0);
        maybe(j, "momentum", o.sgd.momentum);
        maybe(j, "decay", o.sgd.decay);
        maybe(j, "nesterov", o.sgd.nesterov);
        break;
    case OptimizerKind::adam:
        maybe(j, "lr", o.adam.lr);
        maybe(j, "decay", o.adam.decay);
        maybe(j, "beta1", o.adam.beta1);
        maybe(j, "beta2", o.adam.beta2);
        maybe(j, "eps", o.adam.eps);
        break;
    case OptimizerKind::eve:
        maybe(j, "lr", o.eve.lr);
        maybe(j, "decay", o.eve.decay);
        maybe(j, "beta1", o.eve.beta1);
        maybe(j, "beta2", o.eve.beta2);
        maybe(j, "beta3", o.eve.beta3);
        maybe(j, "k", o.eve.k);
        maybe(j, "K", o.eve.K);
        maybe(j, "eps", o.eve.eps);
        break;
    }
    return o;
}

json run_json(const RunConfig& cfg, bool identity_only) {
    json j;
    j["version"] = cfg.version;
    j["model"] = json::parse(model_config_to_json(cfg.model));
    j["dataset"] = {{"name", cfg.dataset.name},
                    {"train_subset", cfg.dataset.train_subset},
                    {"validation", cfg.dataset.validation == ValidationSource::holdout ? "holdout" : "test_as_val"},
                    {"holdout_fraction", cfg.dataset.holdout_fraction},
                    {"val_subset", cfg.dataset.val_subset}};
    j["optimizer"] = optimizer_json(cfg.optimizer);
    j["init"] = cfg.init == InitKind::lsuv ? "lsuv" : "baseline";
    j["lsuv"] = {{"probe", cfg.lsuv_probe}, {"tol_var", cfg.lsuv.tol_var}, {"max_iters", cfg.lsuv.max_iters}};
    j["augment"] = {{"horizontal_flip", cfg.augment.horizontal_flip},
                    {"probability", cfg.augment.flip_probability}};
    j["batch_size"] = cfg.batch_size;
    j["seed"] = cfg.seed;
    if (!identity_only) {
        j["epochs"] = cfg.epochs;
        j["timing"] = cfg.timing;
        j["out_dir"] = cfg.out_dir;
    }
    return j;
}

} // namespace

RunConfig run_config_from_json(const std::string& text, const std::string& base_dir) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("run config is not valid JSON: ") + e.what());
    }
    RunConfig cfg;
    maybe(j, "version", cfg.version);
    if (!j.contains("model")) throw ConfigError("run config missing 'model'");
    const json& m = j.at("model");
    if (m.is_string()) {
        const fs::path p = fs::path(base_dir) / m.get<std::string>();
        cfg.model = load_model_config(p.string());
    } else {
        cfg.model = model_config_from_json(m.dump());
    }
    if (j.contains("variant")) cfg.model.variant = parse_variant(j.at("variant").get<std::string>());
    if (j.contains("steps")) {
        const std::size_t steps = j.at("steps").get<std::size_t>();
        for (StageConfig& s : cfg.model.stages) s.block.steps = steps;
    }
    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        maybe(d, "name", cfg.dataset.name);
        maybe(d, "train_subset", cfg.dataset.train_subset);
        std::string v = "holdout";
        maybe(d, "validation", v);
        if (v == "holdout") {
            cfg.dataset.validation = ValidationSource::holdout;
        } else if (v == "test_as_val") {
            cfg.dataset.validation = ValidationSource::test_as_val;
        } else {
            throw ConfigError("unknown validation source '" + v + "' (expected holdout or test_as_val)");
        }
        maybe(d, "holdout_fraction", cfg.dataset.holdout_fraction);
        maybe(d, "val_subset", cfg.dataset.val_subset);
    }
    if (j.contains("optimizer")) cfg.optimizer = optimizer_from_json(j.at("optimizer"));
    std::string init = "baseline";
    maybe(j, "init", init);
    if (init == "lsuv") {
        cfg.init = InitKind::lsuv;
    } else if (init != "baseline") {
        throw ConfigError("unknown initializer '" + init + "' (expected baseline or lsuv)");
    }
    if (j.contains("lsuv")) {
        const json& l = j.at("lsuv");
        maybe(l, "probe", cfg.lsuv_probe);
        maybe(l, "tol_var", cfg.lsuv.tol_var);
        maybe(l, "max_iters", cfg.lsuv.max_iters);
    }
    if (j.contains("augment")) {
        maybe(j.at("augment"), "horizontal_flip", cfg.augment.horizontal_flip);
        maybe(j.at("augment"), "probability", cfg.augment.flip_probability);
    }
    maybe(j, "epochs", cfg.epochs);
    maybe(j, "batch_size", cfg.batch_size);
    if (!j.contains("seed")) throw ConfigError("run config must set 'seed'");
    maybe(j, "seed", cfg.seed);
    maybe(j, "timing", cfg.timing);
    maybe(j, "out_dir", cfg.out_dir);
    cfg.model.validate();
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    return run_config_from_json(read_text(path), fs::path(path).parent_path().string());
}

std::string run_config_to_json(const RunConfig& cfg) { return run_json(cfg, false).dump(2) + "\n"; }

// ---- data -------------------------------------------------------------------------

PreparedData prepare_data(const RunConfig& cfg, const std::string& data_dir, bool with_test) {
    if (data_dir.empty()) throw ConfigError("no data directory: pass --data-dir or set IRCNN_DATA_DIR");
    const DatasetConfig& d = cfg.dataset;
    PreparedData out;
    Dataset full = load_dataset(d.name, data_dir, Split::train);
    if (d.train_subset > 0) full = subset(full, 0, std::min(d.train_subset, full.size()));
    Dataset test;
    if (with_test || d.validation == ValidationSource::test_as_val) test = load_dataset(d.name, data_dir, Split::test);
    if (d.validation == ValidationSource::holdout) {
        auto [tr, va] = holdout_split(full, d.holdout_fraction);
        out.train = std::move(tr);
        out.val = std::move(va);
    } else {
        out.train = std::move(full);
        out.val = test;
    }
    if (d.val_subset > 0) out.val = subset(out.val, 0, std::min(d.val_subset, out.val.size()));
    if (with_test) out.test = std::move(test);

    const ModelConfig& m = cfg.model;
    const Shape s = out.train.images.shape();
    if (s.c != m.in_channels || s.h != m.height || s.w != m.width) {
        throw ConfigError("dataset samples are " + std::to_string(s.c) + "x" + std::to_string(s.h) + "x" +
                          std::to_string(s.w) + " but the model expects " + std::to_string(m.in_channels) + "x" +
                          std::to_string(m.height) + "x" + std::to_string(m.width));
    }
    if (out.train.classes != m.classes) {
        throw ConfigError("dataset has " + std::to_string(out.train.classes) + " classes, model " +
                          std::to_string(m.classes));
    }

    out.stats = compute_stats(out.train);
    normalize(out.train, out.stats);
    normalize(out.val, out.stats);
    if (with_test) normalize(out.test, out.stats);
    return out;
}

// ---- metrics / evaluation -----------------------------------------------------------

std::string MetricsRow::csv() const {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.3f,%.17g,", epoch, train_loss, train_acc, val_loss,
                  val_acc, epoch_time_s, effective_lr);
    std::string s = buf;
    if (eve_d) {
        std::snprintf(buf, sizeof buf, "%.17g", *eve_d);
        s += buf;
    }
    return s;
}

double EvalResult::class_accuracy(std::size_t k) const {
    return class_count[k] == 0 ? 0.0 : static_cast<double>(class_correct[k]) / static_cast<double>(class_count[k]);
}

template <typename T>
EvalResult evaluate(LayerGraph<T>& graph, const Dataset& ds, std::size_t batch) {
    EvalResult r;
    r.class_count.assign(ds.classes, 0);
    r.class_correct.assign(ds.classes, 0);
    Rng unused(0);
    BatchIterator it(ds, std::min(batch, ds.size()), Mode::infer, {}, unused);
    Batch b;
    double loss_sum = 0.0;
    std::size_t correct = 0;
    while (it.next(b)) {
        const Tensor<T> x = b.x.template cast<T>();
        const ForwardResult<T> fr = graph.forward(x, b.labels, Mode::infer);
        loss_sum += fr.loss * static_cast<double>(b.labels.size());
        const std::size_t k = fr.probs.shape().c;
        for (std::size_t i = 0; i < b.labels.size(); ++i) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < k; ++c) {
                if (fr.probs(i, c, 0, 0) > fr.probs(i, best, 0, 0)) best = c;
            }
            const auto label = static_cast<std::size_t>(b.labels[i]);
            ++r.class_count[label];
            if (best == label) {
                ++r.class_correct[label];
                ++correct;
            }
        }
    }
    r.samples = ds.size();
    r.loss = loss_sum / static_cast<double>(r.samples);
    r.accuracy = static_cast<double>(correct) / static_cast<double>(r.samples);
    r.error_pct = 100.0 * (1.0 - r.accuracy);
    return r;
}

template EvalResult evaluate<float>(LayerGraph<float>&, const Dataset&, std::size_t);
template EvalResult evaluate<double>(LayerGraph<double>&, const Dataset&, std::size_t);

// ---- training -----------------------------------------------------------------------

namespace {

const char* kCheckpointFile = "checkpoint.bin";

void write_summary(const fs::path& dir, const json& j) {
    std::ofstream out(dir / "summary.json", std::ios::trunc);
    if (!out) throw IoError("cannot write summary.json in '" + dir.string() + "'");
    out << j.dump(2) << "\n";
}

void load_params(LayerGraph<float>& g, const ParamMap<float>& saved) {
    if (saved.size() != g.params().size()) {
        throw FormatError("checkpoint holds " + std::to_string(saved.size()) + " tensors, model has " +
                          std::to_string(g.params().size()));
    }
    for (auto& [name, t] : g.params()) {
        auto it = saved.find(name);
        if (it == saved.end()) throw FormatError("checkpoint lacks tensor '" + name + "'");
        if (!(it->second.shape() == t.shape())) {
            throw FormatError("checkpoint tensor '" + name + "' is " + it->second.shape().str() + ", model expects " +
                              t.shape().str());
        }
        t = it->second;
    }
}

// Keeps the header and the first `rows` data lines of an existing metrics file.
void truncate_metrics(const fs::path& path, std::size_t rows) {
    std::vector<std::string> lines;
    {
        std::ifstream in(path);
        std::string line;
        while (std::getline(in, line)) lines.push_back(line);
    }
    if (lines.empty() || lines.front() != kMetricsHeader || lines.size() < rows + 1) {
        throw FormatError("metrics.csv in '" + path.parent_path().string() + "' does not match the checkpoint");
    }
    std::ofstream out(path, std::ios::trunc);
    for (std::size_t i = 0; i <= rows; ++i) out << lines[i] << "\n";
}

json row_json(const MetricsRow& r) {
    json j = {{"epoch", r.epoch},         {"train_loss", r.train_loss}, {"train_acc", r.train_acc},
              {"val_loss", r.val_loss},   {"val_acc", r.val_acc},       {"effective_lr", r.effective_lr}};
    if (r.eve_d) j["eve_d"] = *r.eve_d;
    return j;
}

} // namespace

TrainResult run_training(const RunConfig& cfg, const TrainOptions& opts) {
    cfg.validate();
    if (cfg.out_dir.empty()) throw ConfigError("no output directory: set out_dir or pass --out-dir");
    const fs::path dir(cfg.out_dir);
    fs::create_directories(dir);
    const fs::path metrics_path = dir / "metrics.csv";
    const std::string ckpt_path = (dir / kCheckpointFile).string();

    PreparedData data = prepare_data(cfg, opts.data_dir);
    LayerGraph<float> g = build_model<float>(cfg.model);
    const std::string echo = run_config_to_json(cfg);
    const std::string identity = run_json(cfg, true).dump();

    TrainResult result;
    result.params = count_params(g).total;
    OptimizerState ost;
    Rng data_rng(derive_seed(cfg.seed, "data"));
    g.dropout_rng() = Rng(derive_seed(cfg.seed, "dropout"));
    std::size_t start = 0;

    if (opts.resume) {
        Checkpoint<float> ck = load_checkpoint<float>(ckpt_path);
        const RunConfig saved = run_config_from_json(ck.config);
        if (run_json(saved, true).dump() != identity) {
            throw ConfigError("checkpoint '" + ckpt_path + "' was written by a different run configuration");
        }
        if (!(ck.norm == data.stats)) throw DataError("training data statistics differ from the checkpoint's");
        load_params(g, ck.params);
        ost = ck.optimizer;
        data_rng.set_state(ck.rng.at("data"));
        g.dropout_rng().set_state(ck.rng.at("dropout"));
        start = ck.epoch;
        truncate_metrics(metrics_path, start);
    } else {
        init_baseline(g, derive_seed(cfg.seed, "init"));
        if (cfg.init == InitKind::lsuv) {
            const std::size_t n = std::min(cfg.lsuv_probe, data.train.size());
            const Dataset probe = subset(data.train, 0, n);
            result.lsuv = lsuv_init(g, probe.images, derive_seed(cfg.seed, "lsuv"), cfg.lsuv);
        }
        std::ofstream out(metrics_path, std::ios::trunc);
        if (!out) throw IoError("cannot write '" + metrics_path.string() + "'");
        out << kMetricsHeader << "\n";
    }

    std::ofstream metrics(metrics_path, std::ios::app);
    if (!metrics) throw IoError("cannot append to '" + metrics_path.string() + "'");

    json summary = {{"status", "running"},
                    {"variant", std::string(variant_name(cfg.model.variant))},
                    {"preset", cfg.model.preset},
                    {"params", result.params},
                    {"seed", cfg.seed},
                    {"epochs_planned", cfg.epochs},
                    {"train_samples", data.train.size()},
                    {"val_samples", data.val.size()}};
    if (!result.lsuv.layers.empty()) {
        json layers = json::array();
        for (const LsuvLayer& l : result.lsuv.layers) {
            layers.push_back({{"node", l.node}, {"variance", l.variance}, {"rescales", l.rescales},
                              {"converged", l.converged}});
        }
        summary["lsuv"] = {{"layers", layers}, {"unconverged", result.lsuv.unconverged()}};
    }

    result.status = "completed";
    result.epochs_completed = start;
    for (std::size_t epoch = start + 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        BatchIterator it(data.train, std::min(cfg.batch_size, data.train.size()), Mode::train, cfg.augment, data_rng);
        Batch b;
        double loss_sum = 0.0;
        std::size_t correct = 0;
        std::size_t seen = 0;
        std::size_t batch_idx = 0;
        bool interrupted = false;
        while (it.next(b)) {
            if (opts.interrupt && opts.interrupt->load()) {
                interrupted = true;
                break;
            }
            try {
                StepResult<float> r = g.forward_backward(b.x, b.labels, Mode::train);
                if (!std::isfinite(r.loss)) throw TrainingError("non-finite loss");
                optimizer_step(ost, cfg.optimizer, g, r.grads, r.loss);
                loss_sum += r.loss * static_cast<double>(b.labels.size());
                correct += r.correct;
                seen += b.labels.size();
            } catch (const Error& e) {
                if (e.category() != "numeric" && e.category() != "training") throw;
                summary["status"] = "failed";
                summary["epochs_completed"] = epoch - 1;
                summary["failure"] = {{"epoch", epoch}, {"batch", batch_idx}, {"message", e.what()}};
                write_summary(dir, summary);
                throw TrainingError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", batch " +
                                    std::to_string(batch_idx));
            }
            ++batch_idx;
        }
        if (interrupted) {
            result.status = "interrupted";
            break;
        }

        const EvalResult v = evaluate(g, data.val, cfg.batch_size);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        MetricsRow row;
        row.epoch = epoch;
        row.train_loss = loss_sum / static_cast<double>(seen);
        row.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
        row.val_loss = v.loss;
        row.val_acc = v.accuracy;
        row.epoch_time_s = cfg.timing ? secs : 0.0;
        row.effective_lr = ost.last_lr;
        if (cfg.optimizer.kind == OptimizerKind::eve) row.eve_d = ost.d;
        metrics << row.csv() << "\n";
        metrics.flush();
        result.rows.push_back(row);
        result.epochs_completed = epoch;

        Checkpoint<float> ck;
        ck.config = echo;
        ck.epoch = epoch;
        ck.params = g.params();
        ck.optimizer = ost;
        ck.norm = data.stats;
        ck.rng = {{"data", data_rng.state()}, {"dropout", g.dropout_rng().state()}};
        save_checkpoint(ckpt_path, ck);

        if (!opts.quiet) {
            std::fprintf(stderr, "epoch %zu/%zu  train_loss %.4f  train_acc %.4f  val_loss %.4f  val_acc %.4f  %.1fs\n",
                         epoch, cfg.epochs, row.train_loss, row.train_acc, row.val_loss, row.val_acc, secs);
        }
        if (opts.stop_after_epoch != 0 && epoch >= opts.stop_after_epoch && epoch < cfg.epochs) {
            result.status = "stopped";
            break;
        }
    }

    summary["status"] = result.status;
    summary["epochs_completed"] = result.epochs_completed;
    if (!result.rows.empty()) summary["final"] = row_json(result.rows.back());
    write_summary(dir, summary);
    return result;
}

EvalResult evaluate_checkpoint(const std::string& checkpoint_path, const std::string& split,
                               const std::string& data_dir) {
    const Checkpoint<float> ck = load_checkpoint<float>(checkpoint_path);
    const RunConfig cfg = run_config_from_json(ck.config);
    if (split != "train" && split != "val" && split != "test") {
        throw ConfigError("unknown split '" + split + "' (expected train, val or test)");
    }
    const PreparedData data = prepare_data(cfg, data_dir, split == "test");
    if (!(data.stats == ck.norm)) throw DataError("dataset statistics differ from the checkpoint's");
    LayerGraph<float> g = build_model<float>(cfg.model);
    load_params(g, ck.params);
    const Dataset& ds = split == "train" ? data.train : split == "val" ? data.val : data.test;
    return evaluate(g, ds, cfg.batch_size);
}

// ---- gradient check -----------------------------------------------------------------

double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    return std::abs(analytic - numeric) / denom;
}

bool GradcheckReport::pass() const {
    for (const GradcheckEntry& e : entries) {
        if (!e.pass) return false;
    }
    return !entries.empty();
}

std::string GradcheckReport::str() const {
    std::string s;
    char buf[256];
    for (const GradcheckEntry& e : entries) {
        std::snprintf(buf, sizeof buf, "%-28s %6zu coords  %3zu at kinks  max_rel_err %.3e  %s\n", e.param.c_str(),
                      e.checked, e.at_kinks, e.max_rel_error, e.pass ? "ok" : "FAIL");
        s += buf;
    }
    s += pass() ? "gradcheck: pass\n" : "gradcheck: FAIL\n";
    return s;
}

GradcheckReport gradcheck(const ModelConfig& cfg_in, std::uint64_t seed, const GradcheckOptions& opts) {
    ModelConfig cfg = cfg_in;
    cfg.height = opts.height;
    cfg.width = opts.width;
    LayerGraph<double> g = build_model<double>(cfg);
    const std::size_t total = count_params(g).total;
    if (total > opts.max_params) {
        throw ConfigError("gradcheck needs a tiny model: " + std::to_string(total) + " parameters exceeds " +
                          std::to_string(opts.max_params));
    }
    init_baseline(g, derive_seed(seed, "init"));
    Rng rng(derive_seed(seed, "gradcheck"));
    // Nonzero biases so their gradients are not trivially symmetric.
    for (auto& [name, t] : g.params()) {
        if (!g.param_info().at(name).is_bias) continue;
        for (double& v : t.values()) v = rng.uniform(-0.1, 0.1);
    }

    Tensor<double> x(Shape{opts.batch, cfg.in_channels, cfg.height, cfg.width});
    for (double& v : x.values()) v = rng.normal();
    std::vector<int> labels(opts.batch);
    for (int& l : labels) l = static_cast<int>(rng.below(cfg.classes));

    g.dropout_rng() = Rng(derive_seed(seed, "gradcheck-dropout"));
    const std::string mask_state = g.dropout_rng().state();
    auto loss_at = [&]() {
        g.dropout_rng().set_state(mask_state);
        return g.forward(x, labels, Mode::train).loss;
    };

    g.dropout_rng().set_state(mask_state);
    StepResult<double> analytic = g.forward_backward(x, labels, Mode::train);
    const std::uint64_t signature = g.kink_signature();
    if (!opts.corrupt.empty()) {
        auto it = analytic.grads.find(opts.corrupt);
        if (it == analytic.grads.end()) throw ConfigError("no parameter named '" + opts.corrupt + "'");
        for (double& v : it->second.values()) v = -v;
    }

    GradcheckReport report;
    for (auto& [name, p] : g.params()) {
        const Tensor<double>& grad = analytic.grads.at(name);
        std::vector<std::size_t> coords(p.size());
        for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
        if (!g.param_info().at(name).is_bias && p.size() > opts.coords) {
            for (std::size_t i = 0; i < opts.coords; ++i) {
                std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
            }
            coords.resize(opts.coords);
        }
        GradcheckEntry e{name, coords.size(), 0, 0.0, false};
        for (std::size_t idx : coords) {
            const double orig = p[idx];
            p[idx] = orig + opts.step;
            const double lp = loss_at();
            const bool smooth_p = g.kink_signature() == signature;
            p[idx] = orig - opts.step;
            const double lm = loss_at();
            const bool smooth_m = g.kink_signature() == signature;
            p[idx] = orig;
            if (!smooth_p || !smooth_m) {
                ++e.at_kinks;
                continue;
            }
            const double numeric = (lp - lm) / (2.0 * opts.step);
            e.max_rel_error = std::max(e.max_rel_error, relative_error(grad[idx], numeric));
        }
        e.pass = e.max_rel_error < opts.tolerance && e.at_kinks < e.checked;
        report.entries.push_back(e);
    }
    return report;
}

// ---- parameter reports --------------------------------------------------------------

VariantCounts compare_variants(const ModelConfig& cfg) {
    VariantCounts c;
    for (Variant v : {Variant::ircnn, Variant::ein, Variant::eirn}) {
        ModelConfig m = cfg;
        m.variant = v;
        const std::size_t total = count_params(build_model<float>(m)).total;
        if (v == Variant::ircnn) c.ircnn = total;
        if (v == Variant::ein) c.ein = total;
        if (v == Variant::eirn) c.eirn = total;
    }
    return c;
}

std::string params_table(const ModelConfig& cfg) {
    const ParamCount pc = count_params(build_model<float>(cfg));
    std::string s;
    char buf[256];
    for (const auto& [node, n] : pc.per_node) {
        std::snprintf(buf, sizeof buf, "%-28s %10zu\n", node.c_str(), n);
        s += buf;
    }
    std::snprintf(buf, sizeof buf, "%-28s %10zu\n", "total", pc.total);
    s += buf;
    return s;
}

// ---- linear baseline ----------------------------------------------------------------

LinearBaseline train_linear_baseline(const Dataset& train, const Dataset& val, std::size_t epochs,
                                     std::size_t batch, const SgdConfig& sgd, std::uint64_t seed) {
    auto flatten = [](const Dataset& ds) {
        Dataset f = ds;
        const Shape s = ds.images.shape();
        f.images = ds.images.reshaped(Shape{s.n, s.sample(), 1, 1});
        return f;
    };
    const Dataset ftrain = flatten(train);
    const Dataset fval = flatten(val);
    const std::size_t features = ftrain.images.shape().c;

    LayerGraph<float> g;
    ConvSpec spec;
    spec.kernel_h = spec.kernel_w = 1;
    spec.out_channels = train.classes;
    g.add_conv("linear", std::string(kGraphInput), features, spec, true);
    g.add_softmax_xent("loss", "linear");
    g.validate(Shape{1, features, 1, 1});
    init_baseline(g, derive_seed(seed, "linear"));

    OptimizerState ost;
    Rng rng(derive_seed(seed, "linear-data"));
    for (std::size_t e = 0; e < epochs; ++e) {
        BatchIterator it(ftrain, std::min(batch, ftrain.size()), Mode::train, {}, rng);
        Batch b;
        while (it.next(b)) {
            StepResult<float> r = g.forward_backward(b.x, b.labels, Mode::train);
            sgd_step(ost, g.params(), r.grads, sgd);
        }
    }
    const EvalResult v = evaluate(g, fval, batch);
    return {v.accuracy, v.loss};
}

} // namespace ircnn
