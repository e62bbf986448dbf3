#include "ircnn/kernels.hpp"

#include <algorithm>
#include <cstddef>
#include <string>

namespace ircnn {

namespace {

using index_t = std::ptrdiff_t;

struct ConvGeometry {
    std::size_t ci, h, w;
    std::size_t kh, kw, sh, sw;
    std::size_t oh, ow;
    std::size_t pad_t, pad_l;

    std::size_t patch() const { return ci * kh * kw; }
    std::size_t out_plane() const { return oh * ow; }
    // 1x1, stride 1, no padding: the column matrix is the input itself.
    bool direct() const { return kh == 1 && kw == 1 && sh == 1 && sw == 1 && pad_t == 0 && pad_l == 0; }
};

template <typename T>
ConvGeometry make_geometry(const Shape& x, const Tensor<T>& w, const ConvSpec& spec) {
    const Shape& ws = w.shape();
    if (spec.kernel_h == 0 || spec.kernel_w == 0 || spec.stride_h == 0 || spec.stride_w == 0) {
        throw ConfigError("conv spec with zero kernel or stride");
    }
    if (ws.c != x.c || ws.n != spec.out_channels || ws.h != spec.kernel_h || ws.w != spec.kernel_w) {
        throw ConfigError("conv2d shape mismatch: input " + x.str() + ", weight " + ws.str() +
                          ", spec kernel " + std::to_string(spec.kernel_h) + "x" +
                          std::to_string(spec.kernel_w) + " out_channels " +
                          std::to_string(spec.out_channels));
    }
    const Extent ey = window_extent(x.h, spec.kernel_h, spec.stride_h, spec.padding);
    const Extent ex = window_extent(x.w, spec.kernel_w, spec.stride_w, spec.padding);
    return ConvGeometry{x.c, x.h, x.w, spec.kernel_h, spec.kernel_w, spec.stride_h, spec.stride_w,
                        ey.out, ex.out, ey.pad_before, ex.pad_before};
}

// Output columns [lo, hi) read in-bounds input for kernel column offset j.
struct ColRange {
    std::size_t lo, hi;
};

ColRange valid_columns(const ConvGeometry& g, std::size_t j) {
    const index_t pad = static_cast<index_t>(g.pad_l);
    const index_t sw = static_cast<index_t>(g.sw);
    const index_t off = static_cast<index_t>(j) - pad;  // ix = ox * sw + off
    index_t lo = off >= 0 ? 0 : (-off + sw - 1) / sw;
    index_t hi = (static_cast<index_t>(g.w) - off + sw - 1) / sw;  // first ox with ix >= w
    lo = std::min<index_t>(lo, static_cast<index_t>(g.ow));
    hi = std::clamp<index_t>(hi, lo, static_cast<index_t>(g.ow));
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
    const std::size_t plane = g.out_plane();
    for (std::size_t c = 0; c < g.ci; ++c) {
        const T* src = x + c * g.h * g.w;
        for (std::size_t i = 0; i < g.kh; ++i) {
            for (std::size_t j = 0; j < g.kw; ++j) {
                T* row = col + ((c * g.kh + i) * g.kw + j) * plane;
                const ColRange cr = valid_columns(g, j);
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const index_t iy = static_cast<index_t>(oy * g.sh + i) - static_cast<index_t>(g.pad_t);
                    T* dst = row + oy * g.ow;
                    if (iy < 0 || iy >= static_cast<index_t>(g.h)) {
                        std::fill(dst, dst + g.ow, T{0});
                        continue;
                    }
                    std::fill(dst, dst + cr.lo, T{0});
                    std::fill(dst + cr.hi, dst + g.ow, T{0});
                    const T* srow = src + static_cast<std::size_t>(iy) * g.w + j - g.pad_l;
                    if (g.sw == 1) {
                        std::copy(srow + cr.lo, srow + cr.hi, dst + cr.lo);
                    } else {
                        for (std::size_t ox = cr.lo; ox < cr.hi; ++ox) dst[ox] = srow[ox * g.sw];
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* x) {
    const std::size_t plane = g.out_plane();
    for (std::size_t c = 0; c < g.ci; ++c) {
        T* dst = x + c * g.h * g.w;
        for (std::size_t i = 0; i < g.kh; ++i) {
            for (std::size_t j = 0; j < g.kw; ++j) {
                const T* row = col + ((c * g.kh + i) * g.kw + j) * plane;
                const ColRange cr = valid_columns(g, j);
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const index_t iy = static_cast<index_t>(oy * g.sh + i) - static_cast<index_t>(g.pad_t);
                    if (iy < 0 || iy >= static_cast<index_t>(g.h)) continue;
                    T* drow = dst + static_cast<std::size_t>(iy) * g.w + j - g.pad_l;
                    const T* srow = row + oy * g.ow;
                    for (std::size_t ox = cr.lo; ox < cr.hi; ++ox) drow[ox * g.sw] += srow[ox];
                }
            }
        }
    }
}

// d[o][j] += sum_k w[o][k] * r[k][j], accumulating over k in increasing order
// for every element. Four output rows share each load of r[k].
template <typename T>
void gemm_acc(const T* w, const T* r, T* d, std::size_t rows, std::size_t K, std::size_t n) {
    std::size_t o = 0;
    for (; o + 4 <= rows; o += 4) {
        T* d0 = d + o * n;
        T* d1 = d0 + n;
        T* d2 = d1 + n;
        T* d3 = d2 + n;
        const T* w0 = w + o * K;
        for (std::size_t k = 0; k < K; ++k) {
            const T a0 = w0[k], a1 = w0[K + k], a2 = w0[2 * K + k], a3 = w0[3 * K + k];
            const T* rk = r + k * n;
            for (std::size_t j = 0; j < n; ++j) {
                const T v = rk[j];
                d0[j] += a0 * v;
                d1[j] += a1 * v;
                d2[j] += a2 * v;
                d3[j] += a3 * v;
            }
        }
    }
    for (; o < rows; ++o) {
        T* dr = d + o * n;
        for (std::size_t k = 0; k < K; ++k) {
            const T a = w[o * K + k];
            const T* rk = r + k * n;
            for (std::size_t j = 0; j < n; ++j) dr[j] += a * rk[j];
        }
    }
}

// Fixed-order dot product: eight interleaved partial sums, combined pairwise.
template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
    T lane[8] = {};
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) {
        for (std::size_t l = 0; l < 8; ++l) lane[l] += a[j + l] * b[j + l];
    }
    for (std::size_t l = 0; j < n; ++j, ++l) lane[l] += a[j] * b[j];
    return ((lane[0] + lane[1]) + (lane[2] + lane[3])) + ((lane[4] + lane[5]) + (lane[6] + lane[7]));
}

void check_pool_spec(const PoolSpec& spec) {
    if (spec.window_h != 3 || spec.window_w != 3) {
        throw ConfigError("pooling window must be 3x3, got " + std::to_string(spec.window_h) + "x" +
                          std::to_string(spec.window_w));
    }
    const bool s1 = spec.stride_h == 1 && spec.stride_w == 1;
    const bool s2 = spec.stride_h == 2 && spec.stride_w == 2;
    if (!s1 && !s2) throw ConfigError("pooling stride must be 1x1 or 2x2");
}

} // namespace

Extent window_extent(std::size_t in, std::size_t window, std::size_t stride, Padding padding) {
    if (stride == 0) throw ConfigError("stride must be positive");
    if (padding == Padding::valid) {
        if (in < window) {
            throw ConfigError("window " + std::to_string(window) + " larger than input extent " +
                              std::to_string(in) + " under valid padding");
        }
        return {(in - window) / stride + 1, 0};
    }
    if (in == 0) throw ConfigError("empty input extent");
    const std::size_t out = (in + stride - 1) / stride;
    const std::size_t needed = (out - 1) * stride + window;
    const std::size_t total = needed > in ? needed - in : 0;
    return {out, total / 2};
}

Shape conv_output_shape(const Shape& x, const ConvSpec& spec) {
    const Extent ey = window_extent(x.h, spec.kernel_h, spec.stride_h, spec.padding);
    const Extent ex = window_extent(x.w, spec.kernel_w, spec.stride_w, spec.padding);
    return {x.n, spec.out_channels, ey.out, ex.out};
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::span<const T> bias, const ConvSpec& spec) {
    const ConvGeometry g = make_geometry(x.shape(), w, spec);
    const std::size_t co = spec.out_channels;
    if (!bias.empty() && bias.size() != co) {
        throw ConfigError("conv2d bias of length " + std::to_string(bias.size()) + " for " +
                          std::to_string(co) + " output channels");
    }
    const std::size_t n = x.shape().n;
    const std::size_t K = g.patch();
    const std::size_t plane = g.out_plane();
    Tensor<T> out(Shape{n, co, g.oh, g.ow});
    const T* wp = w.data();

#pragma omp parallel
    {
        std::vector<T> col(g.direct() ? 0 : K * plane);
#pragma omp for schedule(static)
        for (index_t s = 0; s < static_cast<index_t>(n); ++s) {
            const T* src = x.sample(static_cast<std::size_t>(s));
            if (!g.direct()) {
                im2col(src, g, col.data());
                src = col.data();
            }
            T* dst = out.sample(static_cast<std::size_t>(s));
            for (std::size_t o = 0; o < co; ++o) {
                std::fill(dst + o * plane, dst + (o + 1) * plane, bias.empty() ? T{0} : bias[o]);
            }
            gemm_acc(wp, src, dst, co, K, plane);
        }
    }
    check_finite(out, "conv2d");
    return out;
}

template <typename T>
ConvGrads<T> conv2d_grad(const Tensor<T>& x, const Tensor<T>& w, const ConvSpec& spec,
                         const Tensor<T>& grad_out, bool want_grad_x) {
    const ConvGeometry g = make_geometry(x.shape(), w, spec);
    const Shape expect = conv_output_shape(x.shape(), spec);
    if (grad_out.shape() != expect) {
        throw ConfigError("conv2d_grad: grad_out " + grad_out.shape().str() + " does not match output " +
                          expect.str());
    }
    const std::size_t n = x.shape().n;
    const std::size_t co = spec.out_channels;
    const std::size_t K = g.patch();
    const std::size_t plane = g.out_plane();
    const T* wp = w.data();

    ConvGrads<T> r;
    r.grad_w = Tensor<T>(w.shape());
    r.grad_b = Tensor<T>(Shape{co, 1, 1, 1});

#pragma omp parallel for schedule(static)
    for (index_t o = 0; o < static_cast<index_t>(co); ++o) {
        T acc{0};
        for (std::size_t s = 0; s < n; ++s) {
            const T* gp = grad_out.plane(s, static_cast<std::size_t>(o));
            for (std::size_t j = 0; j < plane; ++j) acc += gp[j];
        }
        r.grad_b[static_cast<std::size_t>(o)] = acc;
    }

    std::vector<T> col(g.direct() ? 0 : K * plane);
    T* gw = r.grad_w.data();
    for (std::size_t s = 0; s < n; ++s) {
        const T* src = x.sample(s);
        if (!g.direct()) {
            im2col(src, g, col.data());
            src = col.data();
        }
        const T* gs = grad_out.sample(s);
#pragma omp parallel for schedule(static)
        for (index_t o = 0; o < static_cast<index_t>(co); ++o) {
            const T* gp = gs + static_cast<std::size_t>(o) * plane;
            T* gwrow = gw + static_cast<std::size_t>(o) * K;
            for (std::size_t k = 0; k < K; ++k) gwrow[k] += dot(gp, src + k * plane, plane);
        }
    }

    if (want_grad_x) {
        r.grad_x = Tensor<T>(x.shape());
        std::vector<T> wt(K * co);  // w transposed to (K, co)
        for (std::size_t o = 0; o < co; ++o) {
            for (std::size_t k = 0; k < K; ++k) wt[k * co + o] = wp[o * K + k];
        }
#pragma omp parallel
        {
            std::vector<T> colg(g.direct() ? 0 : K * plane);
#pragma omp for schedule(static)
            for (index_t s = 0; s < static_cast<index_t>(n); ++s) {
                const T* gs = grad_out.sample(static_cast<std::size_t>(s));
                T* gx = r.grad_x.sample(static_cast<std::size_t>(s));
                if (g.direct()) {
                    gemm_acc(wt.data(), gs, gx, K, co, plane);
                } else {
                    std::fill(colg.begin(), colg.end(), T{0});
                    gemm_acc(wt.data(), gs, colg.data(), K, co, plane);
                    col2im_add(colg.data(), g, gx);
                }
            }
        }
        check_finite(r.grad_x, "conv2d_grad(x)");
    }
    check_finite(r.grad_w, "conv2d_grad(w)");
    check_finite(r.grad_b, "conv2d_grad(b)");
    return r;
}

Shape pool_output_shape(const Shape& x, const PoolSpec& spec) {
    check_pool_spec(spec);
    const Extent ey = window_extent(x.h, spec.window_h, spec.stride_h, spec.padding);
    const Extent ex = window_extent(x.w, spec.window_w, spec.stride_w, spec.padding);
    return {x.n, x.c, ey.out, ex.out};
}

template <typename T>
Tensor<T> pool2d(const Tensor<T>& x, const PoolSpec& spec) {
    const Shape os = pool_output_shape(x.shape(), spec);
    const Extent ey = window_extent(x.shape().h, spec.window_h, spec.stride_h, spec.padding);
    const Extent ex = window_extent(x.shape().w, spec.window_w, spec.stride_w, spec.padding);
    const index_t H = static_cast<index_t>(x.shape().h);
    const index_t W = static_cast<index_t>(x.shape().w);
    Tensor<T> out(os);
    const std::size_t planes = os.n * os.c;

#pragma omp parallel for schedule(static)
    for (index_t p = 0; p < static_cast<index_t>(planes); ++p) {
        const T* src = x.data() + static_cast<std::size_t>(p) * x.shape().plane();
        T* dst = out.data() + static_cast<std::size_t>(p) * os.plane();
        for (std::size_t oy = 0; oy < os.h; ++oy) {
            const index_t y0 = static_cast<index_t>(oy * spec.stride_h) - static_cast<index_t>(ey.pad_before);
            const index_t ylo = std::max<index_t>(y0, 0);
            const index_t yhi = std::min<index_t>(y0 + static_cast<index_t>(spec.window_h), H);
            for (std::size_t ox = 0; ox < os.w; ++ox) {
                const index_t x0 = static_cast<index_t>(ox * spec.stride_w) - static_cast<index_t>(ex.pad_before);
                const index_t xlo = std::max<index_t>(x0, 0);
                const index_t xhi = std::min<index_t>(x0 + static_cast<index_t>(spec.window_w), W);
                T v;
                if (spec.mode == PoolMode::max) {
                    v = src[ylo * W + xlo];
                    for (index_t yy = ylo; yy < yhi; ++yy)
                        for (index_t xx = xlo; xx < xhi; ++xx) v = std::max(v, src[yy * W + xx]);
                } else {
                    T acc{0};
                    for (index_t yy = ylo; yy < yhi; ++yy)
                        for (index_t xx = xlo; xx < xhi; ++xx) acc += src[yy * W + xx];
                    v = acc / static_cast<T>((yhi - ylo) * (xhi - xlo));
                }
                dst[oy * os.w + ox] = v;
            }
        }
    }
    check_finite(out, "pool2d");
    return out;
}

template <typename T>
Tensor<T> pool2d_grad(const Tensor<T>& x, const PoolSpec& spec, const Tensor<T>& grad_out) {
    const Shape os = pool_output_shape(x.shape(), spec);
    if (grad_out.shape() != os) {
        throw ConfigError("pool2d_grad: grad_out " + grad_out.shape().str() + " does not match output " +
                          os.str());
    }
    const Extent ey = window_extent(x.shape().h, spec.window_h, spec.stride_h, spec.padding);
    const Extent ex = window_extent(x.shape().w, spec.window_w, spec.stride_w, spec.padding);
    const index_t H = static_cast<index_t>(x.shape().h);
    const index_t W = static_cast<index_t>(x.shape().w);
    Tensor<T> gx(x.shape());
    const std::size_t planes = os.n * os.c;

#pragma omp parallel for schedule(static)
    for (index_t p = 0; p < static_cast<index_t>(planes); ++p) {
        const T* src = x.data() + static_cast<std::size_t>(p) * x.shape().plane();
        const T* g = grad_out.data() + static_cast<std::size_t>(p) * os.plane();
        T* dst = gx.data() + static_cast<std::size_t>(p) * x.shape().plane();
        for (std::size_t oy = 0; oy < os.h; ++oy) {
            const index_t y0 = static_cast<index_t>(oy * spec.stride_h) - static_cast<index_t>(ey.pad_before);
            const index_t ylo = std::max<index_t>(y0, 0);
            const index_t yhi = std::min<index_t>(y0 + static_cast<index_t>(spec.window_h), H);
            for (std::size_t ox = 0; ox < os.w; ++ox) {
                const index_t x0 = static_cast<index_t>(ox * spec.stride_w) - static_cast<index_t>(ex.pad_before);
                const index_t xlo = std::max<index_t>(x0, 0);
                const index_t xhi = std::min<index_t>(x0 + static_cast<index_t>(spec.window_w), W);
                const T gv = g[oy * os.w + ox];
                if (spec.mode == PoolMode::max) {
                    index_t best = ylo * W + xlo;
                    for (index_t yy = ylo; yy < yhi; ++yy)
                        for (index_t xx = xlo; xx < xhi; ++xx)
                            if (src[yy * W + xx] > src[best]) best = yy * W + xx;
                    dst[best] += gv;
                } else {
                    const T share = gv / static_cast<T>((yhi - ylo) * (xhi - xlo));
                    for (index_t yy = ylo; yy < yhi; ++yy)
                        for (index_t xx = xlo; xx < xhi; ++xx) dst[yy * W + xx] += share;
                }
            }
        }
    }
    check_finite(gx, "pool2d_grad");
    return gx;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    const Shape& s = x.shape();
    if (s.h == 0 || s.w == 0) throw ConfigError("global_avg_pool on empty spatial extent " + s.str());
    Tensor<T> out(Shape{s.n, s.c, 1, 1});
    const std::size_t plane = s.plane();
#pragma omp parallel for schedule(static)
    for (index_t p = 0; p < static_cast<index_t>(s.n * s.c); ++p) {
        const T* src = x.data() + static_cast<std::size_t>(p) * plane;
        T acc{0};
        for (std::size_t j = 0; j < plane; ++j) acc += src[j];
        out[static_cast<std::size_t>(p)] = acc / static_cast<T>(plane);
    }
    check_finite(out, "global_avg_pool");
    return out;
}

template <typename T>
Tensor<T> global_avg_pool_grad(const Shape& input, const Tensor<T>& grad_out) {
    if (grad_out.shape() != Shape{input.n, input.c, 1, 1}) {
        throw ConfigError("global_avg_pool_grad: grad_out " + grad_out.shape().str() + " for input " +
                          input.str());
    }
    Tensor<T> gx(input);
    const std::size_t plane = input.plane();
    const T inv = T{1} / static_cast<T>(plane);
    for (std::size_t p = 0; p < input.n * input.c; ++p) {
        const T v = grad_out[p] * inv;
        std::fill(gx.data() + p * plane, gx.data() + (p + 1) * plane, v);
    }
    check_finite(gx, "global_avg_pool_grad");
    return gx;
}

template <typename T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& parts) {
    if (parts.empty()) throw ConfigError("concat_channels of zero parts");
    const Shape& first = parts.front()->shape();
    std::size_t channels = 0;
    for (const Tensor<T>* p : parts) {
        const Shape& s = p->shape();
        if (s.n != first.n || s.h != first.h || s.w != first.w) {
            throw ConfigError("concat_channels spatial mismatch: " + first.str() + " vs " + s.str());
        }
        channels += s.c;
    }
    Tensor<T> out(Shape{first.n, channels, first.h, first.w});
    for (std::size_t s = 0; s < first.n; ++s) {
        T* dst = out.sample(s);
        for (const Tensor<T>* p : parts) {
            const std::size_t len = p->shape().sample();
            std::copy(p->sample(s), p->sample(s) + len, dst);
            dst += len;
        }
    }
    check_finite(out, "concat_channels");
    return out;
}

template <typename T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& grad, const std::vector<std::size_t>& channels) {
    const Shape& s = grad.shape();
    std::size_t total = 0;
    for (std::size_t c : channels) total += c;
    if (total != s.c) {
        throw ConfigError("split_channels: parts sum to " + std::to_string(total) + " channels, tensor has " +
                          std::to_string(s.c));
    }
    std::vector<Tensor<T>> out;
    out.reserve(channels.size());
    for (std::size_t c : channels) out.emplace_back(Shape{s.n, c, s.h, s.w});
    for (std::size_t n = 0; n < s.n; ++n) {
        const T* src = grad.sample(n);
        for (Tensor<T>& part : out) {
            const std::size_t len = part.shape().sample();
            std::copy(src, src + len, part.sample(n));
            src += len;
        }
    }
    return out;
}

template <typename T>
Tensor<T> flip_horizontal(const Tensor<T>& x) {
    const Shape& s = x.shape();
    Tensor<T> out(s);
    for (std::size_t row = 0; row < s.n * s.c * s.h; ++row) {
        const T* src = x.data() + row * s.w;
        T* dst = out.data() + row * s.w;
        std::reverse_copy(src, src + s.w, dst);
    }
    check_finite(out, "flip_horizontal");
    return out;
}

#define IRCNN_INSTANTIATE_KERNELS(T)                                                                  \
    template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, std::span<const T>, const ConvSpec&); \
    template ConvGrads<T> conv2d_grad<T>(const Tensor<T>&, const Tensor<T>&, const ConvSpec&,          \
                                         const Tensor<T>&, bool);                                     \
    template Tensor<T> pool2d<T>(const Tensor<T>&, const PoolSpec&);                                  \
    template Tensor<T> pool2d_grad<T>(const Tensor<T>&, const PoolSpec&, const Tensor<T>&);           \
    template Tensor<T> global_avg_pool<T>(const Tensor<T>&);                                          \
    template Tensor<T> global_avg_pool_grad<T>(const Shape&, const Tensor<T>&);                       \
    template Tensor<T> concat_channels<T>(const std::vector<const Tensor<T>*>&);                      \
    template std::vector<Tensor<T>> split_channels<T>(const Tensor<T>&, const std::vector<std::size_t>&); \
    template Tensor<T> flip_horizontal<T>(const Tensor<T>&);

IRCNN_INSTANTIATE_KERNELS(float)
IRCNN_INSTANTIATE_KERNELS(double)

#undef IRCNN_INSTANTIATE_KERNELS

} // namespace ircnn
