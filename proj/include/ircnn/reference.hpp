#pragma once

#include <span>

#include "ircnn/kernels.hpp"
#include "ircnn/layers.hpp"

// Serial, loop-per-index-formula versions of the hot kernels. They share no
// code with the optimized paths and exist to check and benchmark them.

namespace ircnn::reference {

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::span<const T> bias, const ConvSpec& spec);

template <typename T>
ConvGrads<T> conv2d_grad(const Tensor<T>& x, const Tensor<T>& w, const ConvSpec& spec,
                         const Tensor<T>& grad_out);

template <typename T>
Tensor<T> pool2d(const Tensor<T>& x, const PoolSpec& spec);

template <typename T>
Tensor<T> lrn(const Tensor<T>& x, const LrnAttrs& attrs);

} // namespace ircnn::reference
