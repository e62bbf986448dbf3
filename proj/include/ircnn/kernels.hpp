#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ircnn/tensor.hpp"

// Raw numeric kernels over NCHW tensors. Every kernel parallelizes only over
// axes whose outputs are independent (batch or output channel) and keeps a
// fixed accumulation order, so results are bitwise independent of the thread
// count. The serial reference versions live in ircnn/reference.hpp.

namespace ircnn {

enum class Padding { same, valid };

struct ConvSpec {
    std::size_t kernel_h = 3;
    std::size_t kernel_w = 3;
    std::size_t stride_h = 1;
    std::size_t stride_w = 1;
    Padding padding = Padding::same;
    std::size_t out_channels = 0;
};

/// Output length and leading pad of a sliding window along one axis.
/// Same padding puts the odd pad element at the trailing (bottom/right) side.
struct Extent {
    std::size_t out = 0;
    std::size_t pad_before = 0;
};

Extent window_extent(std::size_t in, std::size_t window, std::size_t stride, Padding padding);

Shape conv_output_shape(const Shape& x, const ConvSpec& spec);

/// Cross-correlation plus per-channel bias. `w` is (co, ci, kh, kw); an empty
/// `bias` means no bias term.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::span<const T> bias, const ConvSpec& spec);

template <typename T>
struct ConvGrads {
    Tensor<T> grad_x;  // empty when not requested
    Tensor<T> grad_w;
    Tensor<T> grad_b;  // (co, 1, 1, 1)
};

template <typename T>
ConvGrads<T> conv2d_grad(const Tensor<T>& x, const Tensor<T>& w, const ConvSpec& spec,
                         const Tensor<T>& grad_out, bool want_grad_x = true);

enum class PoolMode { max, avg };

struct PoolSpec {
    PoolMode mode = PoolMode::max;
    std::size_t window_h = 3;
    std::size_t window_w = 3;
    std::size_t stride_h = 1;
    std::size_t stride_w = 1;
    Padding padding = Padding::same;
};

Shape pool_output_shape(const Shape& x, const PoolSpec& spec);

/// Max pooling ignores padded cells; average pooling divides by the number
/// of in-bounds cells of each window.
template <typename T>
Tensor<T> pool2d(const Tensor<T>& x, const PoolSpec& spec);

/// Max mode routes each output gradient to the first (row-major) maximum of
/// its window.
template <typename T>
Tensor<T> pool2d_grad(const Tensor<T>& x, const PoolSpec& spec, const Tensor<T>& grad_out);

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

template <typename T>
Tensor<T> global_avg_pool_grad(const Shape& input, const Tensor<T>& grad_out);

template <typename T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& parts);

/// Inverse of concat_channels: slices `grad` into consecutive channel groups.
template <typename T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& grad, const std::vector<std::size_t>& channels);

template <typename T>
Tensor<T> flip_horizontal(const Tensor<T>& x);

} // namespace ircnn
