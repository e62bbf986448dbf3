#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ircnn/graph.hpp"

namespace ircnn {

/// Glorot-uniform kernels (bound sqrt(6 / (fan_in + fan_out)), fans counted
/// over the receptive field) and zero biases. Each tensor draws from its own
/// stream derived from (seed, parameter name), so results do not depend on
/// map iteration order or on which other parameters exist.
template <typename T>
void init_baseline(LayerGraph<T>& graph, std::uint64_t seed);

/// Replaces `w` (co, ci, kh, kw) by an orthonormal matrix drawn from normals:
/// rows orthonormal when co <= ci*kh*kw, columns otherwise.
template <typename T>
void orthonormalize(Tensor<T>& w, Rng& rng);

struct LsuvConfig {
    double tol_var = 0.01;
    std::size_t max_iters = 10;
};

struct LsuvLayer {
    std::string node;
    double variance = 0.0;      // probe pre-activation variance after the last rescale
    std::size_t rescales = 0;
    bool converged = false;
};

struct LsuvReport {
    std::vector<LsuvLayer> layers;
    std::size_t unconverged() const;
};

/// Orthonormalizes every kernel, then visits conv and rcl nodes in
/// topological order and rescales each kernel by 1/sqrt(var) of its
/// pre-activation on `probe` until |var - 1| <= tol_var. RCL nodes are probed
/// at T = 0 (conv(x, w_f) + b); w_r receives the same scale as w_f.
/// Biases are left at their current values. A zero-variance layer throws
/// InitError naming the node.
template <typename T>
LsuvReport lsuv_init(LayerGraph<T>& graph, const Tensor<T>& probe, std::uint64_t seed, const LsuvConfig& cfg = {});

/// Population variance of every element, accumulated in double.
template <typename T>
double tensor_variance(const Tensor<T>& t);

} // namespace ircnn
