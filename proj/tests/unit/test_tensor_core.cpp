#include <doctest.h>
#include <omp.h>

#include "ircnn/kernels.hpp"
#include "ircnn/reference.hpp"
#include "support.hpp"

using namespace ircnn;
using testing::random_tensor;

namespace {

// Direct nested-loop convolution; padding derived independently of the library.
Tensor<double> conv_oracle(const Tensor<double>& x, const Tensor<double>& w, const std::vector<double>& b,
                           std::size_t sh, std::size_t sw, bool same) {
    const Shape xs = x.shape(), ws = w.shape();
    auto dims = [&](std::size_t in, std::size_t k, std::size_t s, std::size_t& out, long& pad) {
        if (same) {
            out = (in + s - 1) / s;
            const long total = std::max<long>(0, static_cast<long>((out - 1) * s + k) - static_cast<long>(in));
            pad = total / 2;
        } else {
            out = (in - k) / s + 1;
            pad = 0;
        }
    };
    std::size_t oh, ow;
    long pt, pl;
    dims(xs.h, ws.h, sh, oh, pt);
    dims(xs.w, ws.w, sw, ow, pl);
    Tensor<double> y(Shape{xs.n, ws.n, oh, ow});
    for (std::size_t n = 0; n < xs.n; ++n)
        for (std::size_t o = 0; o < ws.n; ++o)
            for (std::size_t i = 0; i < oh; ++i)
                for (std::size_t j = 0; j < ow; ++j) {
                    double s = b.empty() ? 0.0 : b[o];
                    for (std::size_t c = 0; c < xs.c; ++c)
                        for (std::size_t u = 0; u < ws.h; ++u)
                            for (std::size_t v = 0; v < ws.w; ++v) {
                                const long r = static_cast<long>(i * sh + u) - pt;
                                const long q = static_cast<long>(j * sw + v) - pl;
                                if (r < 0 || q < 0 || r >= static_cast<long>(xs.h) || q >= static_cast<long>(xs.w)) continue;
                                s += x(n, c, r, q) * w(o, c, u, v);
                            }
                    y(n, o, i, j) = s;
                }
    return y;
}

ConvSpec spec(std::size_t k, std::size_t s, Padding p, std::size_t co) {
    ConvSpec c;
    c.kernel_h = c.kernel_w = k;
    c.stride_h = c.stride_w = s;
    c.padding = p;
    c.out_channels = co;
    return c;
}

} // namespace

TEST_SUITE("tensor-core") {

TEST_CASE("window extent puts the odd pad at the trailing side") {
    CHECK(window_extent(5, 3, 2, Padding::same).out == 3);
    CHECK(window_extent(5, 3, 2, Padding::same).pad_before == 1);
    CHECK(window_extent(4, 3, 2, Padding::same).out == 2);
    CHECK(window_extent(4, 3, 2, Padding::same).pad_before == 0);
    CHECK(window_extent(32, 3, 2, Padding::same).out == 16);
    CHECK(window_extent(5, 3, 2, Padding::valid).out == 2);
    CHECK(window_extent(28, 3, 1, Padding::same).out == 28);
}

TEST_CASE("tensor rejects mismatched buffers and reshapes") {
    CHECK_THROWS_AS(Tensor<float>(Shape{1, 1, 2, 2}, std::vector<float>(3)), ConfigError);
    Tensor<float> t(Shape{1, 2, 2, 2});
    CHECK_THROWS_AS(t.reshaped(Shape{1, 1, 3, 3}), ConfigError);
    CHECK(t.reshaped(Shape{2, 4, 1, 1}).shape() == Shape{2, 4, 1, 1});
}

TEST_CASE("check_finite flags NaN and Inf") {
    Tensor<double> t(Shape{1, 1, 1, 3}, 1.0);
    CHECK_NOTHROW(check_finite(t, "x"));
    t[1] = std::nan("");
    CHECK_THROWS_AS(check_finite(t, "x"), NumericError);
    t[1] = INFINITY;
    CHECK_THROWS_AS(check_finite(t, "x"), NumericError);
}

TEST_CASE("identity 1x1 kernel returns the input") {
    const Tensor<double> x = random_tensor<double>(Shape{1, 1, 3, 3}, 1);
    const Tensor<double> w(Shape{1, 1, 1, 1}, 1.0);
    CHECK(conv2d<double>(x, w, {}, spec(1, 1, Padding::same, 1)) == x);
}

TEST_CASE("all-ones 3x3 valid convolution sums the window") {
    const Tensor<double> x(Shape{1, 1, 3, 3}, 1.0);
    const Tensor<double> w(Shape{1, 1, 3, 3}, 1.0);
    const Tensor<double> y = conv2d<double>(x, w, {}, spec(3, 1, Padding::valid, 1));
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y[0] == 9.0);
}

TEST_CASE("convolution matches the nested-loop oracle") {
    struct Case {
        Shape x;
        std::size_t k, s, co;
        Padding p;
    };
    const std::vector<Case> cases = {
        {{2, 3, 5, 5}, 3, 1, 4, Padding::same}, {{2, 3, 5, 5}, 3, 2, 4, Padding::same},
        {{1, 2, 6, 7}, 3, 2, 3, Padding::valid}, {{3, 4, 4, 4}, 1, 1, 5, Padding::same},
        {{1, 2, 8, 8}, 5, 1, 2, Padding::same},  {{1, 1, 6, 6}, 2, 2, 2, Padding::same},
    };
    std::uint64_t seed = 10;
    for (const Case& c : cases) {
        const Tensor<double> x = random_tensor<double>(c.x, seed++);
        const Tensor<double> w = random_tensor<double>(Shape{c.co, c.x.c, c.k, c.k}, seed++);
        const Tensor<double> b = random_tensor<double>(Shape{c.co, 1, 1, 1}, seed++);
        const std::vector<double> bias(b.values().begin(), b.values().end());
        const ConvSpec sp = spec(c.k, c.s, c.p, c.co);
        const Tensor<double> want = conv_oracle(x, w, bias, c.s, c.s, c.p == Padding::same);
        const Tensor<double> got = conv2d<double>(x, w, bias, sp);
        REQUIRE(got.shape() == want.shape());
        CHECK(testing::max_abs_diff(got, want) < 1e-12);
        CHECK(testing::max_abs_diff(reference::conv2d<double>(x, w, bias, sp), want) < 1e-12);
    }
}

TEST_CASE("convolution gradients") {
    const ConvSpec sp = spec(3, 2, Padding::same, 3);
    Tensor<double> x = random_tensor<double>(Shape{2, 2, 5, 5}, 21);
    Tensor<double> w = random_tensor<double>(Shape{3, 2, 3, 3}, 22);
    Tensor<double> b = random_tensor<double>(Shape{3, 1, 1, 1}, 23);
    const Shape ys = conv_output_shape(x.shape(), sp);
    const Tensor<double> seed = random_tensor<double>(ys, 24);

    SUBCASE("zero upstream gradient gives zero gradients") {
        const ConvGrads<double> g = conv2d_grad(x, w, sp, Tensor<double>(ys));
        for (const Tensor<double>* t : {&g.grad_x, &g.grad_w, &g.grad_b}) {
            for (double v : t->values()) CHECK(v == 0.0);
        }
    }
    SUBCASE("match central differences") {
        const ConvGrads<double> g = conv2d_grad(x, w, sp, seed);
        auto loss = [&] {
            return testing::dot(conv2d<double>(x, w, std::span<const double>(b.data(), b.size()), sp), seed);
        };
        CHECK(testing::fd_check(x, g.grad_x, loss) < 1e-4);
        CHECK(testing::fd_check(w, g.grad_w, loss) < 1e-4);
        CHECK(testing::fd_check(b, g.grad_b, loss) < 1e-4);
    }
    SUBCASE("agree with the serial reference") {
        const ConvGrads<double> g = conv2d_grad(x, w, sp, seed);
        const ConvGrads<double> r = reference::conv2d_grad(x, w, sp, seed);
        CHECK(testing::max_abs_diff(g.grad_x, r.grad_x) < 1e-12);
        CHECK(testing::max_abs_diff(g.grad_w, r.grad_w) < 1e-12);
        CHECK(testing::max_abs_diff(g.grad_b, r.grad_b) < 1e-12);
    }
    SUBCASE("1x1 kernel: grad_x is the transposed channel map") {
        const ConvSpec one = spec(1, 1, Padding::same, 3);
        const Tensor<double> w1 = random_tensor<double>(Shape{3, 2, 1, 1}, 25);
        const Tensor<double> g1 = random_tensor<double>(Shape{2, 3, 5, 5}, 26);
        const ConvGrads<double> g = conv2d_grad(x, w1, one, g1);
        for (std::size_t n = 0; n < 2; ++n)
            for (std::size_t c = 0; c < 2; ++c)
                for (std::size_t p = 0; p < 25; ++p) {
                    double s = 0.0;
                    for (std::size_t o = 0; o < 3; ++o) s += w1(o, c, 0, 0) * g1.plane(n, o)[p];
                    CHECK(g.grad_x.plane(n, c)[p] == doctest::Approx(s).epsilon(1e-12));
                }
    }
}

TEST_CASE("max pool: 3x3 stride-2 same windows over 0..15") {
    Tensor<double> x(Shape{1, 1, 4, 4});
    for (std::size_t i = 0; i < 16; ++i) x[i] = static_cast<double>(i);
    PoolSpec p;
    p.mode = PoolMode::max;
    p.stride_h = p.stride_w = 2;
    const Tensor<double> y = pool2d(x, p);
    REQUIRE(y.shape() == Shape{1, 1, 2, 2});
    CHECK(y[0] == 10.0);
    CHECK(y[1] == 11.0);
    CHECK(y[2] == 14.0);
    CHECK(y[3] == 15.0);
    CHECK(reference::pool2d(x, p) == y);
}

TEST_CASE("pooling invariants") {
    PoolSpec avg;
    avg.mode = PoolMode::avg;
    const Tensor<double> c(Shape{2, 3, 5, 4}, 0.7);
    const Tensor<double> yc = pool2d(c, avg);
    CHECK(yc.shape() == c.shape());
    for (double v : yc.values()) CHECK(v == doctest::Approx(0.7).epsilon(1e-15));

    PoolSpec mx;
    mx.stride_h = mx.stride_w = 2;
    Tensor<double> x = random_tensor<double>(Shape{2, 2, 7, 6}, 31);
    Tensor<double> shifted = x;
    for (double& v : shifted.values()) v += 4.0;
    const Tensor<double> a = pool2d(x, mx);
    const Tensor<double> b = pool2d(shifted, mx);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] - 4.0 == doctest::Approx(a[i]).epsilon(1e-14));

    for (const PoolSpec& s : {avg, mx}) {
        const Tensor<double> r = reference::pool2d(x, s);
        CHECK(testing::max_abs_diff(pool2d(x, s), r) < 1e-14);
    }
}

TEST_CASE("max pool gradient routes to the first maximum") {
    const Tensor<double> x(Shape{1, 1, 3, 3}, 1.0);
    PoolSpec p;
    p.padding = Padding::valid;
    const Tensor<double> g = pool2d_grad(x, p, Tensor<double>(Shape{1, 1, 1, 1}, 1.0));
    CHECK(g[0] == 1.0);
    for (std::size_t i = 1; i < 9; ++i) CHECK(g[i] == 0.0);
}

TEST_CASE("pool gradients match central differences") {
    Tensor<double> x = random_tensor<double>(Shape{1, 2, 5, 5}, 41);
    for (PoolMode mode : {PoolMode::max, PoolMode::avg}) {
        PoolSpec p;
        p.mode = mode;
        p.stride_h = p.stride_w = mode == PoolMode::max ? 2 : 1;
        const Tensor<double> seed = random_tensor<double>(pool_output_shape(x.shape(), p), 42);
        const Tensor<double> g = pool2d_grad(x, p, seed);
        CHECK(testing::fd_check(x, g, [&] { return testing::dot(pool2d(x, p), seed); }) < 1e-4);
    }
}

TEST_CASE("global average pooling") {
    const Tensor<double> x(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
    CHECK(global_avg_pool(x)[0] == 2.5);
    const Tensor<double> c(Shape{2, 3, 4, 5}, -1.25);
    const Tensor<double> gc = global_avg_pool(c);
    for (double v : gc.values()) CHECK(v == doctest::Approx(-1.25).epsilon(1e-15));

    Tensor<double> r = random_tensor<double>(Shape{2, 3, 3, 4}, 51);
    const Tensor<double> seed = random_tensor<double>(Shape{2, 3, 1, 1}, 52);
    const Tensor<double> g = global_avg_pool_grad(r.shape(), seed);
    CHECK(testing::fd_check(r, g, [&] { return testing::dot(global_avg_pool(r), seed); }) < 1e-6);
}

TEST_CASE("concat and split") {
    const Tensor<double> a = random_tensor<double>(Shape{2, 4, 3, 3}, 61);
    const Tensor<double> b = random_tensor<double>(Shape{2, 8, 3, 3}, 62);
    const Tensor<double> c = random_tensor<double>(Shape{2, 4, 3, 3}, 63);
    CHECK(concat_channels<double>({&a}) == a);
    const Tensor<double> y = concat_channels<double>({&a, &b, &c});
    CHECK(y.shape().c == 16);
    const std::vector<Tensor<double>> parts = split_channels(y, {4, 8, 4});
    CHECK(parts[0] == a);
    CHECK(parts[1] == b);
    CHECK(parts[2] == c);
    CHECK(concat_channels<double>({&parts[0], &parts[1], &parts[2]}) == y);
}

TEST_CASE("horizontal flip") {
    const Tensor<double> x(Shape{1, 1, 1, 3}, std::vector<double>{1, 2, 3});
    CHECK(flip_horizontal(x) == Tensor<double>(Shape{1, 1, 1, 3}, std::vector<double>{3, 2, 1}));
    const Tensor<float> r = random_tensor<float>(Shape{2, 3, 4, 5}, 71);
    CHECK(flip_horizontal(flip_horizontal(r)) == r);
    const Tensor<double> sym(Shape{1, 1, 2, 3}, std::vector<double>{1, 5, 1, 2, 7, 2});
    CHECK(flip_horizontal(sym) == sym);
}

TEST_CASE("kernels are bitwise independent of the thread count") {
    const ConvSpec sp = spec(3, 1, Padding::same, 6);
    const Tensor<float> x = random_tensor<float>(Shape{5, 3, 9, 9}, 81);
    const Tensor<float> w = random_tensor<float>(Shape{6, 3, 3, 3}, 82);
    const Tensor<float> g = random_tensor<float>(Shape{5, 6, 9, 9}, 83);
    PoolSpec p;
    p.stride_h = p.stride_w = 2;
    const int saved = omp_get_max_threads();
    omp_set_num_threads(1);
    const Tensor<float> y1 = conv2d<float>(x, w, {}, sp);
    const ConvGrads<float> g1 = conv2d_grad(x, w, sp, g);
    const Tensor<float> p1 = pool2d(x, p);
    omp_set_num_threads(4);
    const Tensor<float> y4 = conv2d<float>(x, w, {}, sp);
    const ConvGrads<float> g4 = conv2d_grad(x, w, sp, g);
    const Tensor<float> p4 = pool2d(x, p);
    omp_set_num_threads(saved);
    CHECK(y1 == y4);
    CHECK(g1.grad_x == g4.grad_x);
    CHECK(g1.grad_w == g4.grad_w);
    CHECK(g1.grad_b == g4.grad_b);
    CHECK(p1 == p4);
}

} // TEST_SUITE
