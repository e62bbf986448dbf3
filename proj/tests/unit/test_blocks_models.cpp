#include <doctest.h>

#include "ircnn/harness.hpp"
#include "ircnn/init.hpp"
#include "ircnn/model.hpp"
#include "support.hpp"

using namespace ircnn;
using testing::random_tensor;

namespace {

const std::string kConfigs = std::string(IRCNN_SOURCE_DIR) + "/configs/";

// Tiny preset by hand: stem 1*16*9 + 16; each block has a 1x1 branch
// (16*4 + 4*4 + 4), a 3x3 branch (16*8*9 + 8*8*9 + 8) and a pool branch like
// the 1x1 one; two transactions of 16*16*9 + 16; classifier 16*10 + 10.
constexpr std::size_t kTinyBlock = (16 * 4 + 4 * 4 + 4) * 2 + (16 * 8 * 9 + 8 * 8 * 9 + 8);
constexpr std::size_t kTinyTotal = (16 * 9 + 16) + 2 * kTinyBlock + 2 * (16 * 16 * 9 + 16) + (16 * 10 + 10);

ModelConfig tiny(Variant v = Variant::ircnn) {
    ModelConfig cfg = load_model_config(kConfigs + "tiny.json");
    cfg.variant = v;
    return cfg;
}

} // namespace

TEST_SUITE("blocks-models") {

TEST_CASE("tiny golden parameter total") {
    CHECK(kTinyTotal == 8778);
    CHECK(count_params(build_model<float>(tiny())).total == kTinyTotal);
}

TEST_CASE("block fragment widths and parameter count") {
    IrcnnBlockConfig b{3, 4, 8, 4, 2};
    LayerGraph<double> g = build_ircnn_block<double>(b, 6, 6);
    CHECK(g.output_shape(g.terminal()).c == 16);
    const std::size_t closed = (3 * 4 + 4 * 4 + 4) + (3 * 8 * 9 + 8 * 8 * 9 + 8) + (3 * 4 + 4 * 4 + 4);
    CHECK(count_params(g).total == closed);
}

TEST_CASE("pool branch leaves a constant input unchanged before its RCL") {
    IrcnnBlockConfig b{2, 1, 1, 1, 1};
    LayerGraph<double> g = build_ircnn_block<double>(b, 5, 5);
    init_baseline(g, 1);
    const Tensor<double> x(Shape{1, 2, 5, 5}, 0.3);
    g.forward_until(x, "block.c.rcl");
    for (double v : g.output("block.c.pool").values()) CHECK(v == doctest::Approx(0.3).epsilon(1e-15));
}

TEST_CASE("transaction block output shapes") {
    TransactionBlockConfig pool{8, 3, true, false, 0.5};
    CHECK(build_transaction_block<float>(pool, Shape{1, 4, 32, 32}).output_shape("trans.drop") == Shape{1, 8, 16, 16});
    TransactionBlockConfig gap{8, 3, false, true, 0.5};
    CHECK(build_transaction_block<float>(gap, Shape{1, 4, 32, 32}).output_shape("trans.drop") == Shape{1, 8, 1, 1});
    TransactionBlockConfig plain{8, 3, false, false, 0.5};
    CHECK(build_transaction_block<float>(plain, Shape{1, 4, 7, 9}).output_shape("trans.drop") == Shape{1, 8, 7, 9});
    TransactionBlockConfig both{8, 3, true, true, 0.5};
    CHECK_THROWS_AS(both.validate(), ConfigError);
}

TEST_CASE("variants share output shapes and ircnn/ein parameter parity") {
    for (const char* preset : {"tiny.json", "paper.json"}) {
        ModelConfig cfg = load_model_config(kConfigs + preset);
        const VariantCounts c = compare_variants(cfg);
        CHECK(c.ircnn == c.ein);
        if (std::string(preset) == "tiny.json") CHECK(c.eirn == c.ein);  // identity shortcuts only
    }
    std::vector<Shape> shapes;
    for (Variant v : {Variant::ircnn, Variant::ein, Variant::eirn}) {
        LayerGraph<float> g = build_model<float>(tiny(v));
        for (std::size_t i : g.order()) {
            if (g.nodes()[i].id.ends_with(".concat") || g.nodes()[i].id.ends_with(".drop")) {
                shapes.push_back(g.output_shape(g.nodes()[i].id));
            }
        }
    }
    const std::size_t per = shapes.size() / 3;
    for (std::size_t i = 0; i < per; ++i) {
        CHECK(shapes[i] == shapes[per + i]);
        CHECK(shapes[i] == shapes[2 * per + i]);
    }
}

TEST_CASE("paper preset parameter budget") {
    const std::size_t total = count_params(build_model<float>(load_model_config(kConfigs + "paper.json"))).total;
    CHECK(total >= 3000000);
    CHECK(total <= 3250000);
}

TEST_CASE("eirn block with zero weights is the identity map") {
    IrcnnBlockConfig b{16, 4, 8, 4, 2};
    BlockOptions opts;
    opts.variant = Variant::eirn;
    opts.dropout = 0.0;
    LayerGraph<double> g = build_ircnn_block<double>(b, 5, 5, opts);
    const Tensor<double> x = random_tensor<double>(Shape{2, 16, 5, 5}, 3);
    CHECK(g.forward(x, {}, Mode::infer).output == x);
}

TEST_CASE("model config validation") {
    ModelConfig cfg = tiny();
    cfg.stages.back().transaction.has_gap = false;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    ModelConfig paper = load_model_config(kConfigs + "paper.json");
    paper.stages.pop_back();
    CHECK_THROWS_AS(paper.validate(), ConfigError);

    ModelConfig paper2 = load_model_config(kConfigs + "paper.json");
    paper2.stages[1].transaction.has_maxpool = true;
    CHECK_THROWS_AS(paper2.validate(), ConfigError);

    CHECK_THROWS_AS(model_config_from_json("{\"variant\": \"resnet\"}"), ConfigError);
}

TEST_CASE("model config json round trip") {
    const ModelConfig a = tiny(Variant::eirn);
    const ModelConfig b = model_config_from_json(model_config_to_json(a));
    CHECK(model_config_to_json(a) == model_config_to_json(b));
    CHECK(b.variant == Variant::eirn);
}

TEST_CASE("zero recurrent kernels reproduce the T = 0 network bitwise") {
    ModelConfig cfg = tiny();
    LayerGraph<float> g = build_model<float>(cfg);
    init_baseline(g, 11);
    for (auto& [name, t] : g.params()) {
        if (g.param_info().at(name).role == "w_r") t.fill(0.0f);
    }
    ModelConfig cfg0 = cfg;
    for (StageConfig& s : cfg0.stages) s.block.steps = 0;
    LayerGraph<float> g0 = build_model<float>(cfg0);
    for (auto& [name, t] : g0.params()) t = g.param(name);
    const Tensor<float> x = random_tensor<float>(Shape{4, 1, 28, 28}, 12);
    CHECK(g.forward(x, {}, Mode::infer).output == g0.forward(x, {}, Mode::infer).output);
}

} // TEST_SUITE
