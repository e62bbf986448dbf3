#include <doctest.h>

#include <cmath>

#include "ircnn/init.hpp"
#include "ircnn/model.hpp"
#include "ircnn/optim.hpp"
#include "support.hpp"

using namespace ircnn;
using testing::random_tensor;

namespace {

ConvSpec same(std::size_t k, std::size_t co) {
    ConvSpec c;
    c.kernel_h = c.kernel_w = k;
    c.out_channels = co;
    return c;
}

ParamMap<double> scalar(double v) { return {{"theta", Tensor<double>(Shape{1, 1, 1, 1}, v)}}; }

// Gradient of 0.5 * theta^2.
ParamMap<double> quad_grad(const ParamMap<double>& p) { return scalar(p.at("theta")[0]); }

double theta(const ParamMap<double>& p) { return p.at("theta")[0]; }

} // namespace

TEST_SUITE("training-numerics") {

TEST_CASE("baseline init") {
    LayerGraph<float> a = build_model<float>(load_model_config(std::string(IRCNN_SOURCE_DIR) + "/configs/tiny.json"));
    LayerGraph<float> b = a;
    init_baseline(a, 7);
    init_baseline(b, 7);
    for (const auto& [name, t] : a.params()) {
        CHECK(t == b.param(name));
        if (a.param_info().at(name).is_bias) {
            for (float v : t.values()) CHECK(v == 0.0f);
        }
    }
    LayerGraph<float> big;
    big.add_conv("c", "input", 64, same(3, 64));
    big.validate(Shape{1, 64, 3, 3}, false);
    init_baseline(big, 3);
    const double want = 2.0 / (64 * 9 + 64 * 9);
    CHECK(std::abs(tensor_variance(big.param("c.w")) - want) < 0.1 * want);
}

TEST_CASE("orthonormalize gives orthonormal rows or columns") {
    Rng rng(5);
    for (Shape s : {Shape{4, 2, 3, 3}, Shape{20, 2, 1, 1}}) {
        Tensor<double> w(s);
        orthonormalize(w, rng);
        const std::size_t rows = s.n, cols = s.sample();
        const bool by_rows = rows <= cols;
        const std::size_t count = by_rows ? rows : cols, len = by_rows ? cols : rows;
        auto at = [&](std::size_t v, std::size_t k) { return by_rows ? w[v * cols + k] : w[k * cols + v]; };
        for (std::size_t i = 0; i < count; ++i)
            for (std::size_t j = 0; j < count; ++j) {
                double d = 0.0;
                for (std::size_t k = 0; k < len; ++k) d += at(i, k) * at(j, k);
                CHECK(d == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-12).scale(1.0));
            }
    }
}

TEST_CASE("lsuv on a single conv converges and only rescales") {
    LayerGraph<double> g;
    g.add_conv("c", "input", 3, same(3, 8));
    g.validate(Shape{1, 3, 6, 6}, false);
    Tensor<double> probe(Shape{32, 3, 6, 6});
    Rng rng(1);
    for (double& v : probe.values()) v = rng.normal();

    const LsuvReport r = lsuv_init(g, probe, 4);
    REQUIRE(r.layers.size() == 1);
    CHECK(r.layers[0].converged);
    CHECK(r.layers[0].rescales <= LsuvConfig{}.max_iters);
    CHECK(std::abs(r.layers[0].variance - 1.0) <= 0.01);
    CHECK(r.unconverged() == 0);

    // Direction preserved: the result is a scalar multiple of an orthonormal kernel.
    const Tensor<double>& w = g.param("c.w");
    const double ratio = w[0] / w[1];
    LayerGraph<double> again = g;
    lsuv_init(again, probe, 4);
    CHECK(again.param("c.w")[0] / again.param("c.w")[1] == doctest::Approx(ratio).epsilon(1e-12));
    double norm0 = 0.0;
    for (std::size_t k = 0; k < 27; ++k) norm0 += w[k] * w[k];
    for (std::size_t o = 1; o < 8; ++o) {
        double n = 0.0, d = 0.0;
        for (std::size_t k = 0; k < 27; ++k) {
            n += w[o * 27 + k] * w[o * 27 + k];
            d += w[k] * w[o * 27 + k];
        }
        CHECK(n == doctest::Approx(norm0).epsilon(1e-10));
        CHECK(std::abs(d) < 1e-10 * norm0);
    }
}

TEST_CASE("lsuv on the tiny preset reaches unit variance") {
    LayerGraph<float> g = build_model<float>(load_model_config(std::string(IRCNN_SOURCE_DIR) + "/configs/tiny.json"));
    const Tensor<float> probe = random_tensor<float>(Shape{16, 1, 28, 28}, 2, -1.7, 1.7);
    const LsuvReport r = lsuv_init(g, probe, 3);
    CHECK(r.unconverged() == 0);
    for (const LsuvLayer& l : r.layers) {
        INFO(l.node);
        CHECK(l.variance >= 0.99);
        CHECK(l.variance <= 1.01);
    }
    // w_r follows w_f's scale, so recurrent kernels are never left at zero.
    for (const auto& [name, t] : g.params()) {
        if (g.param_info().at(name).role == "w_r") CHECK(tensor_variance(t) > 0.0);
    }
}

TEST_CASE("lsuv reports a dead layer") {
    LayerGraph<double> g;
    g.add_conv("c", "input", 1, same(1, 2));
    g.validate(Shape{1, 1, 2, 2}, false);
    CHECK_THROWS_AS(lsuv_init(g, Tensor<double>(Shape{4, 1, 2, 2}), 1), InitError);
}

TEST_CASE("sgd") {
    SUBCASE("momentum 0, decay 0 is plain gradient descent") {
        SgdConfig cfg{0.05, 0.0, 0.0, true};
        for (bool nesterov : {true, false}) {
            cfg.nesterov = nesterov;
            ParamMap<double> p = {{"w", random_tensor<double>(Shape{1, 1, 2, 3}, 1)}};
            const ParamMap<double> g = {{"w", random_tensor<double>(Shape{1, 1, 2, 3}, 2)}};
            const Tensor<double> before = p.at("w");
            OptimizerState s;
            sgd_step(s, p, g, cfg);
            for (std::size_t i = 0; i < 6; ++i) CHECK(p.at("w")[i] == before[i] - 0.05 * g.at("w")[i]);
        }
    }
    SUBCASE("zero gradients leave parameters fixed") {
        ParamMap<double> p = scalar(0.7);
        OptimizerState s;
        for (int i = 0; i < 3; ++i) sgd_step(s, p, scalar(0.0), SgdConfig{});
        CHECK(theta(p) == 0.7);
    }
    SUBCASE("three-step nesterov trajectory on 0.5 theta^2") {
        // v1 = -0.1, theta1 = 1 - 0.09 - 0.1; v2 = -0.171; v3 = -0.21141.
        const double golden[] = {0.81, 0.5751, 0.327321};
        ParamMap<double> p = scalar(1.0);
        OptimizerState s;
        for (double want : golden) {
            sgd_step(s, p, quad_grad(p), SgdConfig{0.1, 0.9, 0.0, true});
            CHECK(theta(p) == doctest::Approx(want).epsilon(1e-12));
        }
        CHECK(s.t == 3);
    }
    SUBCASE("decay schedule") {
        OptimizerConfig cfg;
        CHECK(scheduled_lr(cfg, 0) == 0.01);
        CHECK(scheduled_lr(cfg, 1000) == doctest::Approx(0.01 / (1 + 9.99e-7 * 1000)).epsilon(1e-15));
    }
}

TEST_CASE("adam") {
    SUBCASE("first update magnitude is lr under a constant gradient") {
        ParamMap<double> p = scalar(0.0);
        OptimizerState s;
        adam_step(s, p, scalar(1.0), AdamConfig{});
        CHECK(std::abs(theta(p)) == doctest::Approx(1e-3).epsilon(1e-6));
    }
    SUBCASE("zero gradient forever") {
        ParamMap<double> p = scalar(0.3);
        OptimizerState s;
        for (int i = 0; i < 10; ++i) adam_step(s, p, scalar(0.0), AdamConfig{});
        CHECK(theta(p) == 0.3);
    }
    SUBCASE("five-step trajectory on 0.5 theta^2") {
        const double golden[] = {0.9000000005, 0.800412228718595, 0.7015862730308329, 0.6039390607520596,
                                 0.5079636595754515};
        AdamConfig cfg;
        cfg.lr = 0.1;
        ParamMap<double> p = scalar(1.0);
        OptimizerState s;
        for (double want : golden) {
            adam_step(s, p, quad_grad(p), cfg);
            CHECK(theta(p) == doctest::Approx(want).epsilon(1e-13));
        }
    }
}

TEST_CASE("eve") {
    SUBCASE("beta3 = 1 and no decay reproduce adam bitwise") {
        AdamConfig a;
        a.lr = 0.05;
        EveConfig e;
        e.lr = 0.05;
        e.decay = 0.0;
        e.beta1 = a.beta1;
        e.beta2 = a.beta2;
        e.beta3 = 1.0;
        ParamMap<double> pa = {{"w", random_tensor<double>(Shape{1, 1, 1, 4}, 3)}};
        ParamMap<double> pe = pa;
        OptimizerState sa, se;
        Rng rng(9);
        for (int i = 0; i < 100; ++i) {
            const ParamMap<double> g = {{"w", random_tensor<double>(Shape{1, 1, 1, 4}, 100 + i)}};
            adam_step(sa, pa, g, a);
            eve_step(se, pe, g, rng.uniform(0.1, 3.0), e);
            CHECK(se.d == 1.0);
        }
        CHECK(pa.at("w") == pe.at("w"));
    }
    SUBCASE("constant loss drives d toward k") {
        EveConfig e;
        ParamMap<double> p = scalar(1.0);
        OptimizerState s;
        double prev = 2.0;
        for (int i = 0; i < 200; ++i) {
            eve_step(s, p, scalar(0.1), 1.5, e);
            CHECK(s.d >= 0.1);
            CHECK(s.d <= prev);
            prev = s.d;
        }
        CHECK(s.d == doctest::Approx(0.1).epsilon(1e-6));
    }
    SUBCASE("exploding and adversarial loss streams keep d in [k, K]") {
        EveConfig e;
        ParamMap<double> p = scalar(1.0);
        OptimizerState s;
        double loss = 1.0;
        for (int i = 0; i < 200; ++i) {
            loss *= 50.0;
            if (loss > 1e200) loss = 1.0;
            eve_step(s, p, scalar(0.1), loss, e);
            CHECK(s.d >= 0.1);
            CHECK(s.d <= 10.0);
        }
        CHECK(s.d > 9.0);
        CHECK(s.last_lr < scheduled_lr(OptimizerConfig{OptimizerKind::eve}, s.t - 1) / 9.0);
        Rng rng(4);
        for (int i = 0; i < 500; ++i) {
            eve_step(s, p, scalar(0.1), rng.bernoulli(0.5) ? 1e-12 : rng.uniform(0.0, 1e6), e);
            CHECK(s.d >= 0.1);
            CHECK(s.d <= 10.0);
        }
    }
    SUBCASE("non-finite loss is rejected") {
        ParamMap<double> p = scalar(1.0);
        OptimizerState s;
        CHECK_THROWS_AS(eve_step(s, p, scalar(0.1), NAN, EveConfig{}), TrainingError);
    }
}

TEST_CASE("l2 scope") {
    LayerGraph<double> g = build_model<double>(load_model_config(std::string(IRCNN_SOURCE_DIR) + "/configs/tiny.json"));
    for (auto& [name, t] : g.params()) t.fill(1.0);
    ParamMap<double> grads;
    for (const auto& [name, t] : g.params()) grads.emplace(name, Tensor<double>(t.shape()));
    ParamMap<double> untouched = grads;
    apply_l2(untouched, g.params(), g.param_info(), 0.0);
    for (const auto& [name, t] : untouched) CHECK(t == grads.at(name));

    apply_l2(grads, g.params(), g.param_info(), 0.002);
    for (const auto& [name, t] : grads) {
        const ParamInfo& info = g.param_info().at(name);
        const bool in_scope = !info.is_bias && name.starts_with("block");
        INFO(name);
        CHECK(info.regularized == in_scope);
        for (double v : t.values()) CHECK(v == (in_scope ? 0.002 : 0.0));
    }
    CHECK_FALSE(g.param_info().at("stem.conv.w").regularized);
    CHECK(g.param_info().at("block1.b.rcl.w_r").regularized);
}

TEST_CASE("non-finite gradients name the parameter") {
    ParamMap<double> p = scalar(1.0);
    OptimizerState s;
    try {
        sgd_step(s, p, scalar(INFINITY), SgdConfig{});
        FAIL("expected TrainingError");
    } catch (const TrainingError& e) {
        CHECK(std::string(e.what()).find("theta") != std::string::npos);
    }
}

} // TEST_SUITE
