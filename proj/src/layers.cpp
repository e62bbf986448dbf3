#include "ircnn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ircnn {

namespace {
using index_t = std::ptrdiff_t;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> y(x.shape());
    const T* px = x.data();
    T* py = y.data();
    for (std::size_t i = 0; i < x.size(); ++i) py[i] = px[i] > T{0} ? px[i] : T{0};
    return y;
}

template <typename T>
Tensor<T> relu_grad(const Tensor<T>& pre, const Tensor<T>& grad_out) {
    if (pre.shape() != grad_out.shape()) {
        throw ConfigError("relu_grad: " + pre.shape().str() + " vs " + grad_out.shape().str());
    }
    Tensor<T> g(pre.shape());
    const T* pp = pre.data();
    const T* pg = grad_out.data();
    T* out = g.data();
    for (std::size_t i = 0; i < pre.size(); ++i) out[i] = pp[i] > T{0} ? pg[i] : T{0};
    return g;
}

void check_rcl_spec(const ConvSpec& spec) {
    if (spec.stride_h != 1 || spec.stride_w != 1 || spec.padding != Padding::same) {
        throw ConfigError("recurrent convolution requires stride 1 and same padding so input and "
                          "output extents agree");
    }
}

template <typename T>
Tensor<T> rcl_forward(const Tensor<T>& x, const Tensor<T>& w_f, const Tensor<T>& w_r,
                      std::span<const T> bias, std::size_t steps, const ConvSpec& spec,
                      RclCache<T>* cache) {
    check_rcl_spec(spec);
    const std::size_t co = spec.out_channels;
    if (w_r.shape() != Shape{co, co, spec.kernel_h, spec.kernel_w}) {
        throw ConfigError("recurrent kernel " + w_r.shape().str() + " must be (" + std::to_string(co) + "," +
                          std::to_string(co) + "," + std::to_string(spec.kernel_h) + "," +
                          std::to_string(spec.kernel_w) + ")");
    }
    const Tensor<T> feedforward = conv2d(x, w_f, bias, spec);

    std::vector<Tensor<T>> pre;
    std::vector<Tensor<T>> z;
    pre.reserve(steps + 1);
    z.reserve(steps + 1);
    pre.push_back(feedforward);
    z.push_back(relu(feedforward));
    for (std::size_t t = 1; t <= steps; ++t) {
        Tensor<T> p = conv2d(z.back(), w_r, std::span<const T>{}, spec);
        const T* ff = feedforward.data();
        T* pp = p.data();
        for (std::size_t i = 0; i < p.size(); ++i) pp[i] = ff[i] + pp[i];
        z.push_back(relu(p));
        pre.push_back(std::move(p));
    }
    Tensor<T> out = z.back();
    if (cache) {
        cache->x = x;
        cache->pre = std::move(pre);
        cache->z = std::move(z);
        cache->spec = spec;
        cache->steps = steps;
        cache->valid = true;
    }
    return out;
}

template <typename T>
RclGrads<T> rcl_backward(const RclCache<T>& cache, const Tensor<T>& w_f, const Tensor<T>& w_r,
                         const Tensor<T>& grad_out, bool want_grad_x) {
    if (!cache.valid || cache.pre.size() != cache.steps + 1 || cache.z.size() != cache.steps + 1) {
        throw InternalError("rcl_backward called without a matching forward cache");
    }
    if (grad_out.shape() != cache.z.back().shape()) {
        throw InternalError("rcl_backward: grad_out " + grad_out.shape().str() + " does not match cached output " +
                            cache.z.back().shape().str());
    }
    RclGrads<T> r;
    r.grad_w_r = Tensor<T>(w_r.shape());
    Tensor<T> grad_ff(grad_out.shape());
    Tensor<T> g = grad_out;
    for (std::size_t t = cache.steps; t >= 1; --t) {
        Tensor<T> gp = relu_grad(cache.pre[t], g);
        add_inplace(grad_ff, gp);
        ConvGrads<T> cg = conv2d_grad(cache.z[t - 1], w_r, cache.spec, gp, true);
        add_inplace(r.grad_w_r, cg.grad_w);
        g = std::move(cg.grad_x);
    }
    add_inplace(grad_ff, relu_grad(cache.pre[0], g));
    ConvGrads<T> cf = conv2d_grad(cache.x, w_f, cache.spec, grad_ff, want_grad_x);
    r.grad_x = std::move(cf.grad_x);
    r.grad_w_f = std::move(cf.grad_w);
    r.grad_b = std::move(cf.grad_b);
    return r;
}

void LrnAttrs::validate() const {
    if (!(k > 0.0)) throw ConfigError("LRN k must be positive");
    if (beta < 0.0) throw ConfigError("LRN beta must be non-negative");
    if (alpha < 0.0) throw ConfigError("LRN alpha must be non-negative");
}

template <typename T>
Tensor<T> lrn(const Tensor<T>& x, const LrnAttrs& attrs) {
    attrs.validate();
    const Shape& s = x.shape();
    const std::size_t C = s.c;
    const std::size_t P = s.plane();
    const index_t R = static_cast<index_t>(attrs.depth_radius);
    const T alpha = static_cast<T>(attrs.alpha);
    const T beta = static_cast<T>(attrs.beta);
    const T k = static_cast<T>(attrs.k);
    Tensor<T> y(s);

#pragma omp parallel for schedule(static)
    for (index_t n = 0; n < static_cast<index_t>(s.n); ++n) {
        std::vector<T> acc(P);
        for (index_t c = 0; c < static_cast<index_t>(C); ++c) {
            std::fill(acc.begin(), acc.end(), T{0});
            const index_t lo = std::max<index_t>(0, c - R);
            const index_t hi = std::min<index_t>(static_cast<index_t>(C) - 1, c + R);
            for (index_t cc = lo; cc <= hi; ++cc) {
                const T* src = x.plane(static_cast<std::size_t>(n), static_cast<std::size_t>(cc));
                for (std::size_t p = 0; p < P; ++p) acc[p] += src[p] * src[p];
            }
            const T* src = x.plane(static_cast<std::size_t>(n), static_cast<std::size_t>(c));
            T* dst = y.plane(static_cast<std::size_t>(n), static_cast<std::size_t>(c));
            for (std::size_t p = 0; p < P; ++p) dst[p] = src[p] / std::pow(k + alpha * acc[p], beta);
        }
    }
    check_finite(y, "lrn");
    return y;
}

template <typename T>
Tensor<T> lrn_grad(const Tensor<T>& x, const LrnAttrs& attrs, const Tensor<T>& grad_out) {
    attrs.validate();
    if (grad_out.shape() != x.shape()) {
        throw ConfigError("lrn_grad: grad_out " + grad_out.shape().str() + " vs input " + x.shape().str());
    }
    const Shape& s = x.shape();
    const std::size_t C = s.c;
    const std::size_t P = s.plane();
    const index_t R = static_cast<index_t>(attrs.depth_radius);
    const T alpha = static_cast<T>(attrs.alpha);
    const T beta = static_cast<T>(attrs.beta);
    const T k = static_cast<T>(attrs.k);
    Tensor<T> gx(s);

#pragma omp parallel for schedule(static)
    for (index_t n = 0; n < static_cast<index_t>(s.n); ++n) {
        const std::size_t un = static_cast<std::size_t>(n);
        // scale[c] = k + alpha * windowed sum of squares; coef[c] = g x scale^(-beta-1)
        std::vector<T> scale(C * P, T{0});
        std::vector<T> coef(C * P);
        for (index_t c = 0; c < static_cast<index_t>(C); ++c) {
            T* sc = scale.data() + static_cast<std::size_t>(c) * P;
            const index_t lo = std::max<index_t>(0, c - R);
            const index_t hi = std::min<index_t>(static_cast<index_t>(C) - 1, c + R);
            for (index_t cc = lo; cc <= hi; ++cc) {
                const T* src = x.plane(un, static_cast<std::size_t>(cc));
                for (std::size_t p = 0; p < P; ++p) sc[p] += src[p] * src[p];
            }
            for (std::size_t p = 0; p < P; ++p) sc[p] = k + alpha * sc[p];
            const T* src = x.plane(un, static_cast<std::size_t>(c));
            const T* g = grad_out.plane(un, static_cast<std::size_t>(c));
            T* cf = coef.data() + static_cast<std::size_t>(c) * P;
            for (std::size_t p = 0; p < P; ++p) cf[p] = g[p] * src[p] * std::pow(sc[p], -beta - T{1});
        }
        for (index_t c = 0; c < static_cast<index_t>(C); ++c) {
            const T* sc = scale.data() + static_cast<std::size_t>(c) * P;
            const T* src = x.plane(un, static_cast<std::size_t>(c));
            const T* g = grad_out.plane(un, static_cast<std::size_t>(c));
            T* dst = gx.plane(un, static_cast<std::size_t>(c));
            for (std::size_t p = 0; p < P; ++p) dst[p] = g[p] * std::pow(sc[p], -beta);
            const index_t lo = std::max<index_t>(0, c - R);
            const index_t hi = std::min<index_t>(static_cast<index_t>(C) - 1, c + R);
            for (index_t cc = lo; cc <= hi; ++cc) {
                const T* cf = coef.data() + static_cast<std::size_t>(cc) * P;
                for (std::size_t p = 0; p < P; ++p) dst[p] -= T{2} * alpha * beta * src[p] * cf[p];
            }
        }
    }
    check_finite(gx, "lrn_grad");
    return gx;
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Mode mode, Rng& rng, Tensor<T>* mask) {
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
    }
    if (mode == Mode::infer) {
        if (mask) *mask = Tensor<T>();
        return x;
    }
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    Tensor<T> m(x.shape());
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        m[i] = rng.uniform() >= rate ? keep_scale : T{0};
        y[i] = x[i] * m[i];
    }
    if (mask) *mask = std::move(m);
    return y;
}

template <typename T>
Tensor<T> dropout_grad(const Tensor<T>& mask, const Tensor<T>& grad_out) {
    if (mask.empty()) return grad_out;
    if (mask.shape() != grad_out.shape()) {
        throw InternalError("dropout mask " + mask.shape().str() + " vs grad " + grad_out.shape().str());
    }
    Tensor<T> g(grad_out.shape());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = grad_out[i] * mask[i];
    return g;
}

template <typename T>
SoftmaxXent<T> softmax_xent(const Tensor<T>& logits, std::span<const int> labels) {
    const Shape& s = logits.shape();
    if (s.h != 1 || s.w != 1) throw ConfigError("softmax expects (n, K, 1, 1) logits, got " + s.str());
    const std::size_t n = s.n;
    const std::size_t K = s.c;
    const bool with_labels = !labels.empty();
    if (with_labels && labels.size() != n) {
        throw DataError(std::to_string(labels.size()) + " labels for a batch of " + std::to_string(n));
    }
    SoftmaxXent<T> r;
    r.probs = Tensor<T>(s);
    if (with_labels) r.grad_logits = Tensor<T>(s);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const T* l = logits.sample(i);
        T* p = r.probs.sample(i);
        const T m = *std::max_element(l, l + K);
        T sum{0};
        for (std::size_t j = 0; j < K; ++j) {
            p[j] = std::exp(l[j] - m);
            sum += p[j];
        }
        for (std::size_t j = 0; j < K; ++j) p[j] /= sum;
        const std::size_t top = static_cast<std::size_t>(std::max_element(p, p + K) - p);
        if (!with_labels) continue;
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= K) {
            throw DataError("label " + std::to_string(y) + " outside [0, " + std::to_string(K) + ")");
        }
        if (top == static_cast<std::size_t>(y)) ++r.correct;
        loss -= static_cast<double>(l[y] - m) - std::log(static_cast<double>(sum));
        T* g = r.grad_logits.sample(i);
        const T inv_n = T{1} / static_cast<T>(n);
        for (std::size_t j = 0; j < K; ++j) {
            g[j] = (p[j] - (j == static_cast<std::size_t>(y) ? T{1} : T{0})) * inv_n;
        }
    }
    if (with_labels && n > 0) r.loss = loss / static_cast<double>(n);
    check_finite(r.probs, "softmax");
    return r;
}

#define IRCNN_INSTANTIATE_LAYERS(T)                                                                     \
    template Tensor<T> relu<T>(const Tensor<T>&);                                                       \
    template Tensor<T> relu_grad<T>(const Tensor<T>&, const Tensor<T>&);                                \
    template Tensor<T> rcl_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,             \
                                      std::span<const T>, std::size_t, const ConvSpec&, RclCache<T>*);  \
    template RclGrads<T> rcl_backward<T>(const RclCache<T>&, const Tensor<T>&, const Tensor<T>&,        \
                                         const Tensor<T>&, bool);                                       \
    template Tensor<T> lrn<T>(const Tensor<T>&, const LrnAttrs&);                                       \
    template Tensor<T> lrn_grad<T>(const Tensor<T>&, const LrnAttrs&, const Tensor<T>&);                \
    template Tensor<T> dropout<T>(const Tensor<T>&, double, Mode, Rng&, Tensor<T>*);                    \
    template Tensor<T> dropout_grad<T>(const Tensor<T>&, const Tensor<T>&);                             \
    template SoftmaxXent<T> softmax_xent<T>(const Tensor<T>&, std::span<const int>);

IRCNN_INSTANTIATE_LAYERS(float)
IRCNN_INSTANTIATE_LAYERS(double)

#undef IRCNN_INSTANTIATE_LAYERS

} // namespace ircnn
