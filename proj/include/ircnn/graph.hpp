#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ircnn/kernels.hpp"
#include "ircnn/layers.hpp"
#include "ircnn/rng.hpp"
#include "ircnn/tensor.hpp"

namespace ircnn {

enum class LayerKind {
    conv,
    rcl,
    relu,
    lrn,
    dropout,
    maxpool,
    avgpool,
    gap,
    concat,
    residual_add,
    softmax_xent,
};

std::string_view kind_name(LayerKind kind);

/// Kind-specific settings; only the fields relevant to a node's kind are read.
struct NodeAttrs {
    ConvSpec conv;
    bool has_bias = true;
    std::size_t steps = 0;
    double rate = 0.5;
    LrnAttrs lrn;
    PoolSpec pool;
};

struct LayerNode {
    std::string id;
    LayerKind kind = LayerKind::relu;
    std::vector<std::string> inputs;
    NodeAttrs attrs;
    std::vector<std::string> params;  // conv: w[, b]   rcl: w_f, w_r, b
    std::string group;                // enclosing IRCNN block, empty elsewhere
};

struct ParamInfo {
    std::string node;
    std::string role;  // w, b, w_f, w_r
    bool is_bias = false;
    bool regularized = false;  // inside the L2 scope (IRCNN-block kernels)
};

template <typename T>
using ParamMap = std::map<std::string, Tensor<T>>;

/// Name of the implicit graph input.
inline constexpr std::string_view kGraphInput = "input";

template <typename T>
struct ForwardResult {
    double loss = 0.0;
    std::size_t correct = 0;
    double accuracy = 0.0;
    Tensor<T> output;  // logits feeding the loss node, or the terminal output of a fragment
    Tensor<T> probs;   // empty without a loss node
};

template <typename T>
struct StepResult {
    double loss = 0.0;
    std::size_t correct = 0;
    double accuracy = 0.0;
    ParamMap<T> grads;   // empty in infer mode
    Tensor<T> input_grad;  // set only when requested
};

struct ParamCount {
    std::size_t total = 0;
    std::vector<std::pair<std::string, std::size_t>> per_node;  // topological order, nodes with params only
};

/// Static DAG of layers with named parameters and a reverse-mode backward
/// pass. Build with the add_* helpers, then validate() once against an input
/// sample shape before running.
template <typename T>
class LayerGraph {
public:
    LayerGraph() = default;

    // ---- construction ----
    std::string add_conv(const std::string& id, const std::string& input, std::size_t in_channels,
                         const ConvSpec& spec, bool bias = true, const std::string& group = {});
    std::string add_rcl(const std::string& id, const std::string& input, std::size_t in_channels,
                        const ConvSpec& spec, std::size_t steps, const std::string& group = {});
    std::string add_relu(const std::string& id, const std::string& input, const std::string& group = {});
    std::string add_lrn(const std::string& id, const std::string& input, const LrnAttrs& attrs,
                        const std::string& group = {});
    std::string add_dropout(const std::string& id, const std::string& input, double rate,
                            const std::string& group = {});
    std::string add_pool(const std::string& id, const std::string& input, const PoolSpec& spec,
                         const std::string& group = {});
    std::string add_gap(const std::string& id, const std::string& input, const std::string& group = {});
    std::string add_concat(const std::string& id, const std::vector<std::string>& inputs,
                           const std::string& group = {});
    std::string add_residual_add(const std::string& id, const std::string& a, const std::string& b,
                                 const std::string& group = {});
    std::string add_softmax_xent(const std::string& id, const std::string& input);

    /// Checks ids, acyclicity, parameter shapes and channel accounting, and
    /// infers every node's output shape for a batch of `input` samples (the
    /// batch extent is ignored).
    void validate(const Shape& input, bool require_loss = true);
    bool validated() const noexcept { return validated_; }

    const std::vector<LayerNode>& nodes() const noexcept { return nodes_; }
    const LayerNode& node(const std::string& id) const;
    const std::vector<std::size_t>& order() const;
    /// Inferred per-sample output shape (n = 1).
    const Shape& output_shape(const std::string& id) const;
    const Shape& input_shape() const noexcept { return input_shape_; }
    const std::string& terminal() const;

    ParamMap<T>& params() noexcept { return params_; }
    const ParamMap<T>& params() const noexcept { return params_; }
    Tensor<T>& param(const std::string& name);
    const Tensor<T>& param(const std::string& name) const;
    const std::map<std::string, ParamInfo>& param_info() const noexcept { return info_; }

    /// Sets the recurrence depth of every rcl node.
    void set_steps(std::size_t steps);

    Rng& dropout_rng() noexcept { return dropout_rng_; }

    // ---- execution ----
    ForwardResult<T> forward(const Tensor<T>& x, std::span<const int> labels, Mode mode);

    /// Forward pass plus, in train mode, gradients of the mean loss (or of
    /// <terminal output, seed> for fragments) with respect to every parameter.
    StepResult<T> forward_backward(const Tensor<T>& x, std::span<const int> labels, Mode mode,
                                   const Tensor<T>* seed = nullptr, bool want_input_grad = false);

    /// Infer-mode forward of every node strictly before `node_id` in
    /// topological order; outputs are then available through output().
    void forward_until(const Tensor<T>& x, const std::string& node_id);

    /// Cached output of the last forward pass.
    const Tensor<T>& output(const std::string& id) const;

    /// Hash of every non-smooth decision of the last train-mode forward:
    /// ReLU and RCL activation patterns and max-pool routing. Finite
    /// differences are only meaningful between points with equal signatures.
    std::uint64_t kink_signature() const;

private:
    struct NodeState {
        Tensor<T> out;
        Tensor<T> mask;
        RclCache<T> rcl;
    };

    std::string add_node(LayerNode node);
    void add_param(const std::string& node, const std::string& role, Shape shape, bool is_bias,
                   const std::string& group);
    std::size_t index_of(const std::string& id) const;
    void require_validated() const;
    const Tensor<T>& input_value(const std::string& id) const;
    void run_node(std::size_t idx, Mode mode, std::span<const int> labels, ForwardResult<T>& result);

    std::vector<LayerNode> nodes_;
    std::map<std::string, std::size_t> index_;
    ParamMap<T> params_;
    std::map<std::string, ParamInfo> info_;
    std::vector<std::size_t> order_;
    std::vector<Shape> shapes_;
    Shape input_shape_{};
    bool validated_ = false;
    std::string terminal_;
    std::string loss_node_;
    Rng dropout_rng_{0};

    Tensor<T> input_value_;
    std::vector<NodeState> state_;
};

template <typename T>
ParamCount count_params(const LayerGraph<T>& graph);

} // namespace ircnn
