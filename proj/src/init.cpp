#include "ircnn/init.hpp"

#include <cmath>
#include <utility>

namespace ircnn {

template <typename T>
void init_baseline(LayerGraph<T>& graph, std::uint64_t seed) {
    for (auto& [name, w] : graph.params()) {
        if (graph.param_info().at(name).is_bias) {
            w.fill(T(0));
            continue;
        }
        const Shape s = w.shape();
        const double receptive = static_cast<double>(s.h * s.w);
        const double fan_in = static_cast<double>(s.c) * receptive;
        const double fan_out = static_cast<double>(s.n) * receptive;
        const double bound = std::sqrt(6.0 / (fan_in + fan_out));
        Rng rng(derive_seed(seed, name));
        for (T& v : w.values()) v = static_cast<T>(rng.uniform(-bound, bound));
    }
}

template <typename T>
void orthonormalize(Tensor<T>& w, Rng& rng) {
    const std::size_t rows = w.shape().n;
    const std::size_t cols = w.shape().c * w.shape().h * w.shape().w;
    const bool by_rows = rows <= cols;
    const std::size_t count = by_rows ? rows : cols;  // vectors to orthonormalize
    const std::size_t len = by_rows ? cols : rows;

    std::vector<double> m(rows * cols);
    for (double& v : m) v = rng.normal();
    auto at = [&](std::size_t vec, std::size_t i) -> double& {
        return by_rows ? m[vec * cols + i] : m[i * cols + vec];
    };

    // Modified Gram-Schmidt.
    for (std::size_t a = 0; a < count; ++a) {
        for (std::size_t b = 0; b < a; ++b) {
            double dot = 0.0;
            for (std::size_t i = 0; i < len; ++i) dot += at(a, i) * at(b, i);
            for (std::size_t i = 0; i < len; ++i) at(a, i) -= dot * at(b, i);
        }
        double norm = 0.0;
        for (std::size_t i = 0; i < len; ++i) norm += at(a, i) * at(a, i);
        norm = std::sqrt(norm);
        if (!(norm > 1e-12)) throw InitError("orthonormalization lost rank");
        for (std::size_t i = 0; i < len; ++i) at(a, i) /= norm;
    }
    for (std::size_t i = 0; i < m.size(); ++i) w[i] = static_cast<T>(m[i]);
}

std::size_t LsuvReport::unconverged() const {
    std::size_t n = 0;
    for (const LsuvLayer& l : layers) n += l.converged ? 0 : 1;
    return n;
}

template <typename T>
double tensor_variance(const Tensor<T>& t) {
    if (t.size() == 0) return 0.0;
    double mean = 0.0;
    for (T v : t.values()) mean += static_cast<double>(v);
    mean /= static_cast<double>(t.size());
    double var = 0.0;
    for (T v : t.values()) {
        const double d = static_cast<double>(v) - mean;
        var += d * d;
    }
    return var / static_cast<double>(t.size());
}

template <typename T>
LsuvReport lsuv_init(LayerGraph<T>& graph, const Tensor<T>& probe, std::uint64_t seed, const LsuvConfig& cfg) {
    if (!graph.validated()) throw InternalError("lsuv_init on an unvalidated graph");
    for (auto& [name, w] : graph.params()) {
        if (graph.param_info().at(name).is_bias) continue;
        Rng rng(derive_seed(seed, "lsuv:" + name));
        orthonormalize(w, rng);
    }

    LsuvReport report;
    for (std::size_t idx : graph.order()) {
        const LayerNode& n = graph.nodes()[idx];
        if (n.kind != LayerKind::conv && n.kind != LayerKind::rcl) continue;
        graph.forward_until(probe, n.id);
        const Tensor<T>& in = graph.output(n.inputs.front());

        Tensor<T>& w = graph.param(n.params[0]);
        Tensor<T>* w_r = n.kind == LayerKind::rcl ? &graph.param(n.params[1]) : nullptr;
        const std::string bias_name =
            n.kind == LayerKind::rcl ? n.params[2] : (n.attrs.has_bias ? n.params[1] : std::string());

        LsuvLayer layer{n.id, 0.0, 0, false};
        for (;;) {
            std::span<const T> bias;
            if (!bias_name.empty()) bias = std::as_const(graph.param(bias_name)).values();
            const double var = tensor_variance(conv2d(in, w, bias, n.attrs.conv));
            layer.variance = var;
            if (!(var > 0.0) || !std::isfinite(var)) {
                throw InitError("layer '" + n.id + "' has zero pre-activation variance on the probe batch");
            }
            if (std::abs(var - 1.0) <= cfg.tol_var) {
                layer.converged = true;
                break;
            }
            if (layer.rescales == cfg.max_iters) break;
            const double scale = 1.0 / std::sqrt(var);
            for (T& v : w.values()) v = static_cast<T>(v * scale);
            if (w_r) {
                for (T& v : w_r->values()) v = static_cast<T>(v * scale);
            }
            ++layer.rescales;
        }
        report.layers.push_back(layer);
    }
    return report;
}

#define IRCNN_INSTANTIATE_INIT(T)                                                                           \
    template void init_baseline<T>(LayerGraph<T>&, std::uint64_t);                                          \
    template void orthonormalize<T>(Tensor<T>&, Rng&);                                                      \
    template LsuvReport lsuv_init<T>(LayerGraph<T>&, const Tensor<T>&, std::uint64_t, const LsuvConfig&);  \
    template double tensor_variance<T>(const Tensor<T>&);

IRCNN_INSTANTIATE_INIT(float)
IRCNN_INSTANTIATE_INIT(double)

#undef IRCNN_INSTANTIATE_INIT

} // namespace ircnn
