#include "ircnn/reference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ircnn::reference {

namespace {

using index_t = std::ptrdiff_t;

// Leading pad of a same-padded window; the odd element goes to the end.
index_t lead_pad(std::size_t in, std::size_t window, std::size_t stride, std::size_t out, Padding p) {
    if (p == Padding::valid) return 0;
    const index_t need = static_cast<index_t>((out - 1) * stride + window) - static_cast<index_t>(in);
    return need > 0 ? need / 2 : 0;
}

} // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::span<const T> bias, const ConvSpec& spec) {
    const Shape os = conv_output_shape(x.shape(), spec);
    const Shape& xs = x.shape();
    const index_t pt = lead_pad(xs.h, spec.kernel_h, spec.stride_h, os.h, spec.padding);
    const index_t pl = lead_pad(xs.w, spec.kernel_w, spec.stride_w, os.w, spec.padding);
    Tensor<T> out(os);
    for (std::size_t n = 0; n < os.n; ++n)
        for (std::size_t o = 0; o < os.c; ++o)
            for (std::size_t oy = 0; oy < os.h; ++oy)
                for (std::size_t ox = 0; ox < os.w; ++ox) {
                    T acc = bias.empty() ? T{0} : bias[o];
                    for (std::size_t c = 0; c < xs.c; ++c)
                        for (std::size_t i = 0; i < spec.kernel_h; ++i)
                            for (std::size_t j = 0; j < spec.kernel_w; ++j) {
                                const index_t iy = static_cast<index_t>(oy * spec.stride_h + i) - pt;
                                const index_t ix = static_cast<index_t>(ox * spec.stride_w + j) - pl;
                                if (iy < 0 || ix < 0 || iy >= static_cast<index_t>(xs.h) ||
                                    ix >= static_cast<index_t>(xs.w))
                                    continue;
                                acc += w(o, c, i, j) * x(n, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
                            }
                    out(n, o, oy, ox) = acc;
                }
    return out;
}

template <typename T>
ConvGrads<T> conv2d_grad(const Tensor<T>& x, const Tensor<T>& w, const ConvSpec& spec,
                         const Tensor<T>& grad_out) {
    const Shape os = conv_output_shape(x.shape(), spec);
    const Shape& xs = x.shape();
    const index_t pt = lead_pad(xs.h, spec.kernel_h, spec.stride_h, os.h, spec.padding);
    const index_t pl = lead_pad(xs.w, spec.kernel_w, spec.stride_w, os.w, spec.padding);
    ConvGrads<T> r{Tensor<T>(xs), Tensor<T>(w.shape()), Tensor<T>(Shape{os.c, 1, 1, 1})};
    for (std::size_t n = 0; n < os.n; ++n)
        for (std::size_t o = 0; o < os.c; ++o)
            for (std::size_t oy = 0; oy < os.h; ++oy)
                for (std::size_t ox = 0; ox < os.w; ++ox) {
                    const T g = grad_out(n, o, oy, ox);
                    r.grad_b[o] += g;
                    for (std::size_t c = 0; c < xs.c; ++c)
                        for (std::size_t i = 0; i < spec.kernel_h; ++i)
                            for (std::size_t j = 0; j < spec.kernel_w; ++j) {
                                const index_t iy = static_cast<index_t>(oy * spec.stride_h + i) - pt;
                                const index_t ix = static_cast<index_t>(ox * spec.stride_w + j) - pl;
                                if (iy < 0 || ix < 0 || iy >= static_cast<index_t>(xs.h) ||
                                    ix >= static_cast<index_t>(xs.w))
                                    continue;
                                const auto uy = static_cast<std::size_t>(iy);
                                const auto ux = static_cast<std::size_t>(ix);
                                r.grad_w(o, c, i, j) += g * x(n, c, uy, ux);
                                r.grad_x(n, c, uy, ux) += g * w(o, c, i, j);
                            }
                }
    return r;
}

template <typename T>
Tensor<T> pool2d(const Tensor<T>& x, const PoolSpec& spec) {
    const Shape os = pool_output_shape(x.shape(), spec);
    const Shape& xs = x.shape();
    const index_t pt = lead_pad(xs.h, spec.window_h, spec.stride_h, os.h, spec.padding);
    const index_t pl = lead_pad(xs.w, spec.window_w, spec.stride_w, os.w, spec.padding);
    Tensor<T> out(os);
    for (std::size_t n = 0; n < os.n; ++n)
        for (std::size_t c = 0; c < os.c; ++c)
            for (std::size_t oy = 0; oy < os.h; ++oy)
                for (std::size_t ox = 0; ox < os.w; ++ox) {
                    T best = -std::numeric_limits<T>::infinity();
                    T sum{0};
                    std::size_t count = 0;
                    for (std::size_t i = 0; i < spec.window_h; ++i)
                        for (std::size_t j = 0; j < spec.window_w; ++j) {
                            const index_t iy = static_cast<index_t>(oy * spec.stride_h + i) - pt;
                            const index_t ix = static_cast<index_t>(ox * spec.stride_w + j) - pl;
                            if (iy < 0 || ix < 0 || iy >= static_cast<index_t>(xs.h) ||
                                ix >= static_cast<index_t>(xs.w))
                                continue;
                            const T v = x(n, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
                            best = std::max(best, v);
                            sum += v;
                            ++count;
                        }
                    out(n, c, oy, ox) = spec.mode == PoolMode::max ? best : sum / static_cast<T>(count);
                }
    return out;
}

template <typename T>
Tensor<T> lrn(const Tensor<T>& x, const LrnAttrs& a) {
    const Shape& s = x.shape();
    Tensor<T> y(s);
    const auto R = static_cast<index_t>(a.depth_radius);
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c)
            for (std::size_t i = 0; i < s.h; ++i)
                for (std::size_t j = 0; j < s.w; ++j) {
                    double sum = 0.0;
                    for (index_t cc = static_cast<index_t>(c) - R; cc <= static_cast<index_t>(c) + R; ++cc) {
                        if (cc < 0 || cc >= static_cast<index_t>(s.c)) continue;
                        const double v = x(n, static_cast<std::size_t>(cc), i, j);
                        sum += v * v;
                    }
                    y(n, c, i, j) = static_cast<T>(x(n, c, i, j) / std::pow(a.k + a.alpha * sum, a.beta));
                }
    return y;
}

#define IRCNN_INSTANTIATE_REFERENCE(T)                                                                  \
    template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, std::span<const T>, const ConvSpec&); \
    template ConvGrads<T> conv2d_grad<T>(const Tensor<T>&, const Tensor<T>&, const ConvSpec&, const Tensor<T>&); \
    template Tensor<T> pool2d<T>(const Tensor<T>&, const PoolSpec&);                                    \
    template Tensor<T> lrn<T>(const Tensor<T>&, const LrnAttrs&);

IRCNN_INSTANTIATE_REFERENCE(float)
IRCNN_INSTANTIATE_REFERENCE(double)

#undef IRCNN_INSTANTIATE_REFERENCE

} // namespace ircnn::reference
