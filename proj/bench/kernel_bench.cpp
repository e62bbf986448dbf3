// Optimized kernels against the serial reference on tiny- and paper-sized layers.

#include <benchmark/benchmark.h>

#include "ircnn/kernels.hpp"
#include "ircnn/reference.hpp"
#include "ircnn/rng.hpp"

using namespace ircnn;

namespace {

Tensor<float> random(Shape s, std::uint64_t seed) {
    Tensor<float> t(s);
    Rng rng(seed);
    for (float& v : t.values()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    return t;
}

struct ConvCase {
    Tensor<float> x, w, gy;
    std::vector<float> b;
    ConvSpec spec;
};

// args: batch, in channels, out channels, spatial size, kernel
ConvCase make_case(const benchmark::State& st) {
    const auto n = static_cast<std::size_t>(st.range(0)), ci = static_cast<std::size_t>(st.range(1)),
               co = static_cast<std::size_t>(st.range(2)), hw = static_cast<std::size_t>(st.range(3)),
               k = static_cast<std::size_t>(st.range(4));
    ConvCase c;
    c.spec.kernel_h = c.spec.kernel_w = k;
    c.spec.out_channels = co;
    c.x = random(Shape{n, ci, hw, hw}, 1);
    c.w = random(Shape{co, ci, k, k}, 2);
    c.b.assign(co, 0.1f);
    c.gy = random(conv_output_shape(c.x.shape(), c.spec), 3);
    return c;
}

void set_flops(benchmark::State& st, double factor) {
    const double flops = 2.0 * st.range(0) * st.range(1) * st.range(2) * st.range(3) * st.range(3) * st.range(4) *
                         st.range(4) * factor;
    st.counters["GFLOP/s"] = benchmark::Counter(flops, benchmark::Counter::kIsIterationInvariantRate,
                                                benchmark::Counter::kIs1000);
}

void BM_conv_forward(benchmark::State& st) {
    const ConvCase c = make_case(st);
    for (auto _ : st) benchmark::DoNotOptimize(conv2d<float>(c.x, c.w, c.b, c.spec));
    set_flops(st, 1.0);
}

void BM_conv_forward_reference(benchmark::State& st) {
    const ConvCase c = make_case(st);
    for (auto _ : st) benchmark::DoNotOptimize(reference::conv2d<float>(c.x, c.w, c.b, c.spec));
    set_flops(st, 1.0);
}

void BM_conv_backward(benchmark::State& st) {
    const ConvCase c = make_case(st);
    for (auto _ : st) benchmark::DoNotOptimize(conv2d_grad<float>(c.x, c.w, c.spec, c.gy));
    set_flops(st, 2.0);
}

void BM_conv_backward_reference(benchmark::State& st) {
    const ConvCase c = make_case(st);
    for (auto _ : st) benchmark::DoNotOptimize(reference::conv2d_grad<float>(c.x, c.w, c.spec, c.gy));
    set_flops(st, 2.0);
}

void BM_maxpool(benchmark::State& st) {
    const Tensor<float> x = random(Shape{32, 64, 32, 32}, 4);
    PoolSpec spec;
    spec.stride_h = spec.stride_w = 2;
    for (auto _ : st) benchmark::DoNotOptimize(pool2d<float>(x, spec));
}

void BM_maxpool_reference(benchmark::State& st) {
    const Tensor<float> x = random(Shape{32, 64, 32, 32}, 4);
    PoolSpec spec;
    spec.stride_h = spec.stride_w = 2;
    for (auto _ : st) benchmark::DoNotOptimize(reference::pool2d<float>(x, spec));
}

void conv_args(benchmark::internal::Benchmark* b) {
    b->Args({32, 16, 8, 28, 3});    // tiny preset 3x3 branch
    b->Args({32, 16, 4, 28, 1});    // tiny preset 1x1 branch
    b->Args({8, 96, 64, 32, 3});    // paper preset first stage
    b->Unit(benchmark::kMillisecond)->UseRealTime();
}

} // namespace

BENCHMARK(BM_conv_forward)->Apply(conv_args);
BENCHMARK(BM_conv_forward_reference)->Apply(conv_args);
BENCHMARK(BM_conv_backward)->Apply(conv_args);
BENCHMARK(BM_conv_backward_reference)->Apply(conv_args);
BENCHMARK(BM_maxpool)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_maxpool_reference)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
