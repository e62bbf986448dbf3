#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ircnn/kernels.hpp"
#include "ircnn/rng.hpp"
#include "ircnn/tensor.hpp"

namespace ircnn {

enum class Mode { train, infer };

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

/// grad_out masked by `pre > 0`.
template <typename T>
Tensor<T> relu_grad(const Tensor<T>& pre, const Tensor<T>& grad_out);

// ---- recurrent convolution -------------------------------------------------
//
// z(0) = relu(conv(x, w_f) + b)
// z(t) = relu(conv(x, w_f) + conv(z(t-1), w_r) + b),   t = 1..steps
//
// The feedforward term is evaluated once and reused at every step.

template <typename T>
struct RclCache {
    Tensor<T> x;
    std::vector<Tensor<T>> pre;  // pre-activation per step, steps + 1 entries
    std::vector<Tensor<T>> z;    // activations per step
    ConvSpec spec;
    std::size_t steps = 0;
    bool valid = false;
};

/// Throws ConfigError unless `spec` is stride 1 with same padding.
void check_rcl_spec(const ConvSpec& spec);

template <typename T>
Tensor<T> rcl_forward(const Tensor<T>& x, const Tensor<T>& w_f, const Tensor<T>& w_r,
                      std::span<const T> bias, std::size_t steps, const ConvSpec& spec,
                      RclCache<T>* cache = nullptr);

template <typename T>
struct RclGrads {
    Tensor<T> grad_x;  // empty when not requested
    Tensor<T> grad_w_f;
    Tensor<T> grad_w_r;
    Tensor<T> grad_b;
};

template <typename T>
RclGrads<T> rcl_backward(const RclCache<T>& cache, const Tensor<T>& w_f, const Tensor<T>& w_r,
                         const Tensor<T>& grad_out, bool want_grad_x = true);

// ---- local response normalization -----------------------------------------

struct LrnAttrs {
    std::size_t depth_radius = 2;
    double alpha = 1e-4;
    double beta = 0.75;
    double k = 2.0;

    void validate() const;
};

/// y = x / (k + alpha * sum_{c' in window(c)} x_{c'}^2)^beta, window clipped
/// at the channel edges.
template <typename T>
Tensor<T> lrn(const Tensor<T>& x, const LrnAttrs& attrs);

template <typename T>
Tensor<T> lrn_grad(const Tensor<T>& x, const LrnAttrs& attrs, const Tensor<T>& grad_out);

// ---- dropout ---------------------------------------------------------------

/// Inverted dropout. `mask` receives the per-element multiplier (0 or
/// 1/(1-rate)); in infer mode it is left empty and `x` is returned unchanged.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Mode mode, Rng& rng, Tensor<T>* mask = nullptr);

template <typename T>
Tensor<T> dropout_grad(const Tensor<T>& mask, const Tensor<T>& grad_out);

// ---- softmax cross-entropy -------------------------------------------------

template <typename T>
struct SoftmaxXent {
    double loss = 0.0;       // mean negative log-likelihood
    std::size_t correct = 0; // top-1 hits
    Tensor<T> probs;
    Tensor<T> grad_logits;   // (probs - onehot) / n
};

/// `logits` is (n, K, 1, 1). An empty `labels` span skips loss and gradient.
template <typename T>
SoftmaxXent<T> softmax_xent(const Tensor<T>& logits, std::span<const int> labels);

} // namespace ircnn
