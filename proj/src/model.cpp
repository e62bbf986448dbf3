#include "ircnn/model.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace ircnn {

using nlohmann::json;

std::string_view variant_name(Variant v) {
    switch (v) {
    case Variant::ircnn: return "ircnn";
    case Variant::ein: return "ein";
    case Variant::eirn: return "eirn";
    }
    return "?";
}

Variant parse_variant(std::string_view name) {
    if (name == "ircnn") return Variant::ircnn;
    if (name == "ein") return Variant::ein;
    if (name == "eirn") return Variant::eirn;
    throw ConfigError("unknown model variant '" + std::string(name) + "' (expected ircnn, ein or eirn)");
}

void IrcnnBlockConfig::validate() const {
    if (c1x1 == 0 || c3x3 == 0 || cpool == 0) {
        throw ConfigError("IRCNN block branch widths must be positive, got (" + std::to_string(c1x1) + ", " +
                          std::to_string(c3x3) + ", " + std::to_string(cpool) + ")");
    }
    if (in_channels == 0) throw ConfigError("IRCNN block with zero input channels");
}

void TransactionBlockConfig::validate() const {
    if (has_maxpool && has_gap) throw ConfigError("transaction block cannot have both max pooling and GAP");
    if (out_channels == 0) throw ConfigError("transaction block with zero output channels");
    if (kernel != 1 && kernel != 3) throw ConfigError("transaction kernel must be 1 or 3");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("transaction dropout must lie in [0, 1)");
}

void ModelConfig::validate() {
    if (in_channels == 0 || height == 0 || width == 0) throw ConfigError("model input extents must be positive");
    if (classes < 2) throw ConfigError("model needs at least two classes");
    if (stem.out_channels == 0) throw ConfigError("stem with zero output channels");
    if (stem.kernel != 1 && stem.kernel != 3) throw ConfigError("stem kernel must be 1 or 3");
    if (stages.empty()) throw ConfigError("model needs at least one stage");
    if (!(block_dropout >= 0.0 && block_dropout < 1.0)) throw ConfigError("block dropout must lie in [0, 1)");
    lrn.validate();
    std::size_t channels = stem.out_channels;
    for (std::size_t i = 0; i < stages.size(); ++i) {
        StageConfig& s = stages[i];
        s.block.in_channels = channels;
        s.block.validate();
        s.transaction.validate();
        const bool last = i + 1 == stages.size();
        if (s.transaction.has_gap != last) {
            throw ConfigError("global average pooling must appear in exactly the final transaction block");
        }
        channels = s.transaction.out_channels;
    }
    if (preset == "paper") {
        if (stages.size() != 3) throw ConfigError("paper preset has exactly three stages");
        const TransactionBlockConfig& t2 = stages[1].transaction;
        if (t2.has_maxpool || t2.has_gap) {
            throw ConfigError("paper preset: second transaction block is convolution and dropout only");
        }
    }
}

// ---- JSON -----------------------------------------------------------------------

namespace {

LrnPlacement parse_placement(const std::string& s) {
    if (s == "per_branch") return LrnPlacement::per_branch;
    if (s == "after_concat") return LrnPlacement::after_concat;
    throw ConfigError("unknown LRN placement '" + s + "'");
}

template <typename V>
V get(const json& j, const char* key) {
    if (!j.contains(key)) throw ConfigError(std::string("model config missing field '") + key + "'");
    try {
        return j.at(key).get<V>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model config field '") + key + "': " + e.what());
    }
}

} // namespace

ModelConfig model_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("model config is not valid JSON: ") + e.what());
    }
    ModelConfig cfg;
    cfg.version = j.value("version", 1);
    if (cfg.version != 1) throw ConfigError("unsupported model config version " + std::to_string(cfg.version));
    cfg.preset = j.value("preset", std::string("custom"));
    cfg.variant = parse_variant(j.value("variant", std::string("ircnn")));
    const json& in = j.at("input");
    cfg.in_channels = get<std::size_t>(in, "channels");
    cfg.height = get<std::size_t>(in, "height");
    cfg.width = get<std::size_t>(in, "width");
    cfg.classes = get<std::size_t>(j, "classes");
    const json& stem = j.at("stem");
    cfg.stem.out_channels = get<std::size_t>(stem, "out_channels");
    cfg.stem.kernel = stem.value("kernel", std::size_t{3});
    if (j.contains("lrn")) {
        const json& l = j.at("lrn");
        cfg.lrn.depth_radius = l.value("depth_radius", cfg.lrn.depth_radius);
        cfg.lrn.alpha = l.value("alpha", cfg.lrn.alpha);
        cfg.lrn.beta = l.value("beta", cfg.lrn.beta);
        cfg.lrn.k = l.value("k", cfg.lrn.k);
        cfg.lrn_placement = parse_placement(l.value("placement", std::string("per_branch")));
    }
    cfg.block_dropout = j.value("block_dropout", cfg.block_dropout);
    for (const json& s : j.at("stages")) {
        StageConfig st;
        const json& b = s.at("block");
        st.block.c1x1 = get<std::size_t>(b, "c1x1");
        st.block.c3x3 = get<std::size_t>(b, "c3x3");
        st.block.cpool = get<std::size_t>(b, "cpool");
        st.block.steps = b.value("steps", st.block.steps);
        const json& t = s.at("transaction");
        st.transaction.out_channels = get<std::size_t>(t, "out_channels");
        st.transaction.kernel = t.value("kernel", st.transaction.kernel);
        st.transaction.has_maxpool = t.value("maxpool", false);
        st.transaction.has_gap = t.value("gap", false);
        st.transaction.dropout = t.value("dropout", st.transaction.dropout);
        cfg.stages.push_back(st);
    }
    cfg.validate();
    return cfg;
}

std::string model_config_to_json(const ModelConfig& cfg) {
    json j;
    j["version"] = cfg.version;
    j["preset"] = cfg.preset;
    j["variant"] = std::string(variant_name(cfg.variant));
    j["input"] = {{"channels", cfg.in_channels}, {"height", cfg.height}, {"width", cfg.width}};
    j["classes"] = cfg.classes;
    j["stem"] = {{"out_channels", cfg.stem.out_channels}, {"kernel", cfg.stem.kernel}};
    j["lrn"] = {{"depth_radius", cfg.lrn.depth_radius},
                {"alpha", cfg.lrn.alpha},
                {"beta", cfg.lrn.beta},
                {"k", cfg.lrn.k},
                {"placement", cfg.lrn_placement == LrnPlacement::per_branch ? "per_branch" : "after_concat"}};
    j["block_dropout"] = cfg.block_dropout;
    json stages = json::array();
    for (const StageConfig& s : cfg.stages) {
        stages.push_back({{"block",
                           {{"c1x1", s.block.c1x1},
                            {"c3x3", s.block.c3x3},
                            {"cpool", s.block.cpool},
                            {"steps", s.block.steps}}},
                          {"transaction",
                           {{"out_channels", s.transaction.out_channels},
                            {"kernel", s.transaction.kernel},
                            {"maxpool", s.transaction.has_maxpool},
                            {"gap", s.transaction.has_gap},
                            {"dropout", s.transaction.dropout}}}});
    }
    j["stages"] = stages;
    return j.dump(2) + "\n";
}

ModelConfig load_model_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open model config '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return model_config_from_json(ss.str());
}

// ---- builders ---------------------------------------------------------------------

namespace {

ConvSpec same_conv(std::size_t kernel, std::size_t out) {
    ConvSpec s;
    s.kernel_h = s.kernel_w = kernel;
    s.out_channels = out;
    return s;
}

// One recurrent unit: an RCL, or for the ablations two unshared conv+ReLU
// layers whose second conv has no bias (so the kernel and bias counts match
// the RCL's w_f, w_r, b exactly).
template <typename T>
std::string append_unit(LayerGraph<T>& g, const std::string& prefix, const std::string& input, std::size_t in_ch,
                        std::size_t kernel, std::size_t out, std::size_t steps, Variant variant,
                        const std::string& group) {
    const ConvSpec spec = same_conv(kernel, out);
    if (variant == Variant::ircnn) return g.add_rcl(prefix + ".rcl", input, in_ch, spec, steps, group);
    g.add_conv(prefix + ".conv1", input, in_ch, spec, true, group);
    g.add_relu(prefix + ".relu1", prefix + ".conv1", group);
    g.add_conv(prefix + ".conv2", prefix + ".relu1", out, spec, false, group);
    return g.add_relu(prefix + ".relu2", prefix + ".conv2", group);
}

} // namespace

template <typename T>
FragmentOutput append_ircnn_block(LayerGraph<T>& g, const std::string& prefix, const std::string& input,
                                  const IrcnnBlockConfig& cfg, const BlockOptions& opts) {
    cfg.validate();
    const bool per_branch = opts.lrn_placement == LrnPlacement::per_branch;
    auto finish_branch = [&](const std::string& name, const std::string& from) {
        if (!per_branch) return from;
        g.add_lrn(name + ".lrn", from, opts.lrn, prefix);
        return g.add_dropout(name + ".drop", name + ".lrn", opts.dropout, prefix);
    };

    const std::string a = prefix + ".a";
    const std::string b = prefix + ".b";
    const std::string c = prefix + ".c";
    const std::string out_a =
        finish_branch(a, append_unit(g, a, input, cfg.in_channels, 1, cfg.c1x1, cfg.steps, opts.variant, prefix));
    const std::string out_b =
        finish_branch(b, append_unit(g, b, input, cfg.in_channels, 3, cfg.c3x3, cfg.steps, opts.variant, prefix));
    PoolSpec avg;
    avg.mode = PoolMode::avg;
    g.add_pool(c + ".pool", input, avg, prefix);
    const std::string out_c = finish_branch(
        c, append_unit(g, c, c + ".pool", cfg.in_channels, 1, cfg.cpool, cfg.steps, opts.variant, prefix));

    std::string out = g.add_concat(prefix + ".concat", {out_a, out_b, out_c}, prefix);
    if (!per_branch) {
        g.add_lrn(prefix + ".lrn", out, opts.lrn, prefix);
        out = g.add_dropout(prefix + ".drop", prefix + ".lrn", opts.dropout, prefix);
    }
    if (opts.variant == Variant::eirn) {
        std::string shortcut = input;
        if (cfg.in_channels != cfg.out_channels()) {
            shortcut = g.add_conv(prefix + ".proj", input, cfg.in_channels, same_conv(1, cfg.out_channels()), true);
        }
        out = g.add_residual_add(prefix + ".add", out, shortcut, prefix);
    }
    return {out, cfg.out_channels()};
}

template <typename T>
FragmentOutput append_transaction_block(LayerGraph<T>& g, const std::string& prefix, const std::string& input,
                                        std::size_t in_channels, const TransactionBlockConfig& cfg) {
    cfg.validate();
    g.add_conv(prefix + ".conv", input, in_channels, same_conv(cfg.kernel, cfg.out_channels), true);
    std::string out = g.add_relu(prefix + ".relu", prefix + ".conv");
    if (cfg.has_maxpool) {
        PoolSpec mp;
        mp.mode = PoolMode::max;
        mp.stride_h = mp.stride_w = 2;
        out = g.add_pool(prefix + ".pool", out, mp);
    }
    if (cfg.has_gap) out = g.add_gap(prefix + ".gap", out);
    out = g.add_dropout(prefix + ".drop", out, cfg.dropout);
    return {out, cfg.out_channels};
}

template <typename T>
LayerGraph<T> build_ircnn_block(const IrcnnBlockConfig& cfg, std::size_t height, std::size_t width,
                                const BlockOptions& opts) {
    LayerGraph<T> g;
    append_ircnn_block(g, "block", std::string(kGraphInput), cfg, opts);
    g.validate(Shape{1, cfg.in_channels, height, width}, false);
    if (g.output_shape(g.terminal()).c != cfg.out_channels()) {
        throw InternalError("block output channels disagree with branch widths");
    }
    return g;
}

template <typename T>
LayerGraph<T> build_transaction_block(const TransactionBlockConfig& cfg, const Shape& input) {
    LayerGraph<T> g;
    append_transaction_block(g, "trans", std::string(kGraphInput), input.c, cfg);
    g.validate(input, false);
    return g;
}

template <typename T>
LayerGraph<T> build_model(ModelConfig cfg) {
    cfg.validate();
    LayerGraph<T> g;
    ConvSpec stem = same_conv(cfg.stem.kernel, cfg.stem.out_channels);
    g.add_conv("stem.conv", std::string(kGraphInput), cfg.in_channels, stem, true);
    std::string cur = g.add_relu("stem.relu", "stem.conv");
    std::size_t channels = cfg.stem.out_channels;

    BlockOptions opts{cfg.variant, cfg.lrn, cfg.lrn_placement, cfg.block_dropout};
    for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
        const std::string idx = std::to_string(i + 1);
        IrcnnBlockConfig block = cfg.stages[i].block;
        block.in_channels = channels;
        const FragmentOutput bo = append_ircnn_block(g, "block" + idx, cur, block, opts);
        const FragmentOutput to = append_transaction_block(g, "trans" + idx, bo.id, bo.channels,
                                                           cfg.stages[i].transaction);
        cur = to.id;
        channels = to.channels;
    }
    g.add_conv("classifier", cur, channels, same_conv(1, cfg.classes), true);
    g.add_softmax_xent("loss", "classifier");
    g.validate(cfg.input_shape(), true);

    // Channel accounting for every concatenation.
    for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
        const std::string id = "block" + std::to_string(i + 1) + ".concat";
        if (g.output_shape(id).c != cfg.stages[i].block.out_channels()) {
            throw InternalError("channel accounting failed at " + id);
        }
    }
    return g;
}

#define IRCNN_INSTANTIATE_MODEL(T)                                                                          \
    template FragmentOutput append_ircnn_block<T>(LayerGraph<T>&, const std::string&, const std::string&,  \
                                                  const IrcnnBlockConfig&, const BlockOptions&);           \
    template FragmentOutput append_transaction_block<T>(LayerGraph<T>&, const std::string&,                \
                                                        const std::string&, std::size_t,                   \
                                                        const TransactionBlockConfig&);                    \
    template LayerGraph<T> build_ircnn_block<T>(const IrcnnBlockConfig&, std::size_t, std::size_t,         \
                                                const BlockOptions&);                                      \
    template LayerGraph<T> build_transaction_block<T>(const TransactionBlockConfig&, const Shape&);       \
    template LayerGraph<T> build_model<T>(ModelConfig);

IRCNN_INSTANTIATE_MODEL(float)
IRCNN_INSTANTIATE_MODEL(double)

#undef IRCNN_INSTANTIATE_MODEL

} // namespace ircnn
