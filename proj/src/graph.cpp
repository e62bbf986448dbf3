#include "ircnn/graph.hpp"

#include <algorithm>
#include <queue>
#include <set>
#include <utility>

namespace ircnn {

std::string_view kind_name(LayerKind kind) {
    switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::rcl: return "rcl";
    case LayerKind::relu: return "relu";
    case LayerKind::lrn: return "lrn";
    case LayerKind::dropout: return "dropout";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::avgpool: return "avgpool";
    case LayerKind::gap: return "gap";
    case LayerKind::concat: return "concat";
    case LayerKind::residual_add: return "residual_add";
    case LayerKind::softmax_xent: return "softmax_xent";
    }
    return "?";
}

// ---- construction -----------------------------------------------------------

template <typename T>
std::string LayerGraph<T>::add_node(LayerNode node) {
    if (node.id.empty() || node.id == kGraphInput) {
        throw ConfigError("invalid node id '" + node.id + "'");
    }
    if (index_.count(node.id)) throw ConfigError("duplicate node id '" + node.id + "'");
    index_[node.id] = nodes_.size();
    nodes_.push_back(std::move(node));
    validated_ = false;
    return nodes_.back().id;
}

template <typename T>
void LayerGraph<T>::add_param(const std::string& node, const std::string& role, Shape shape, bool is_bias,
                              const std::string& group) {
    const std::string name = node + "." + role;
    params_[name] = Tensor<T>(shape);
    info_[name] = ParamInfo{node, role, is_bias, !is_bias && !group.empty()};
    nodes_[index_.at(node)].params.push_back(name);
}

template <typename T>
std::string LayerGraph<T>::add_conv(const std::string& id, const std::string& input, std::size_t in_channels,
                                    const ConvSpec& spec, bool bias, const std::string& group) {
    LayerNode n{id, LayerKind::conv, {input}, {}, {}, group};
    n.attrs.conv = spec;
    n.attrs.has_bias = bias;
    add_node(std::move(n));
    add_param(id, "w", Shape{spec.out_channels, in_channels, spec.kernel_h, spec.kernel_w}, false, group);
    if (bias) add_param(id, "b", Shape{spec.out_channels, 1, 1, 1}, true, group);
    return id;
}

template <typename T>
std::string LayerGraph<T>::add_rcl(const std::string& id, const std::string& input, std::size_t in_channels,
                                   const ConvSpec& spec, std::size_t steps, const std::string& group) {
    check_rcl_spec(spec);
    LayerNode n{id, LayerKind::rcl, {input}, {}, {}, group};
    n.attrs.conv = spec;
    n.attrs.steps = steps;
    add_node(std::move(n));
    const std::size_t co = spec.out_channels;
    add_param(id, "w_f", Shape{co, in_channels, spec.kernel_h, spec.kernel_w}, false, group);
    add_param(id, "w_r", Shape{co, co, spec.kernel_h, spec.kernel_w}, false, group);
    add_param(id, "b", Shape{co, 1, 1, 1}, true, group);
    return id;
}

template <typename T>
std::string LayerGraph<T>::add_relu(const std::string& id, const std::string& input, const std::string& group) {
    return add_node(LayerNode{id, LayerKind::relu, {input}, {}, {}, group});
}

template <typename T>
std::string LayerGraph<T>::add_lrn(const std::string& id, const std::string& input, const LrnAttrs& attrs,
                                   const std::string& group) {
    attrs.validate();
    LayerNode n{id, LayerKind::lrn, {input}, {}, {}, group};
    n.attrs.lrn = attrs;
    return add_node(std::move(n));
}

template <typename T>
std::string LayerGraph<T>::add_dropout(const std::string& id, const std::string& input, double rate,
                                       const std::string& group) {
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
    }
    LayerNode n{id, LayerKind::dropout, {input}, {}, {}, group};
    n.attrs.rate = rate;
    return add_node(std::move(n));
}

template <typename T>
std::string LayerGraph<T>::add_pool(const std::string& id, const std::string& input, const PoolSpec& spec,
                                    const std::string& group) {
    LayerNode n{id, spec.mode == PoolMode::max ? LayerKind::maxpool : LayerKind::avgpool, {input}, {}, {}, group};
    n.attrs.pool = spec;
    return add_node(std::move(n));
}

template <typename T>
std::string LayerGraph<T>::add_gap(const std::string& id, const std::string& input, const std::string& group) {
    return add_node(LayerNode{id, LayerKind::gap, {input}, {}, {}, group});
}

template <typename T>
std::string LayerGraph<T>::add_concat(const std::string& id, const std::vector<std::string>& inputs,
                                      const std::string& group) {
    if (inputs.empty()) throw ConfigError("concat node '" + id + "' without inputs");
    return add_node(LayerNode{id, LayerKind::concat, inputs, {}, {}, group});
}

template <typename T>
std::string LayerGraph<T>::add_residual_add(const std::string& id, const std::string& a, const std::string& b,
                                            const std::string& group) {
    return add_node(LayerNode{id, LayerKind::residual_add, {a, b}, {}, {}, group});
}

template <typename T>
std::string LayerGraph<T>::add_softmax_xent(const std::string& id, const std::string& input) {
    return add_node(LayerNode{id, LayerKind::softmax_xent, {input}, {}, {}, {}});
}

// ---- validation ---------------------------------------------------------------

template <typename T>
std::size_t LayerGraph<T>::index_of(const std::string& id) const {
    const auto it = index_.find(id);
    if (it == index_.end()) throw ConfigError("unknown node '" + id + "'");
    return it->second;
}

template <typename T>
void LayerGraph<T>::validate(const Shape& input, bool require_loss) {
    validated_ = false;
    if (nodes_.empty()) throw ConfigError("empty graph");
    input_shape_ = Shape{1, input.c, input.h, input.w};

    // Kahn's algorithm; ties resolved by insertion order.
    const std::size_t count = nodes_.size();
    std::vector<std::size_t> indegree(count, 0);
    std::vector<std::vector<std::size_t>> consumers(count);
    for (std::size_t i = 0; i < count; ++i) {
        for (const std::string& in : nodes_[i].inputs) {
            if (in == kGraphInput) continue;
            const auto it = index_.find(in);
            if (it == index_.end()) {
                throw ConfigError("node '" + nodes_[i].id + "' reads unresolved input '" + in + "'");
            }
            consumers[it->second].push_back(i);
            ++indegree[i];
        }
    }
    std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
    for (std::size_t i = 0; i < count; ++i)
        if (indegree[i] == 0) ready.push(i);
    order_.clear();
    while (!ready.empty()) {
        const std::size_t i = ready.top();
        ready.pop();
        order_.push_back(i);
        for (std::size_t c : consumers[i])
            if (--indegree[c] == 0) ready.push(c);
    }
    if (order_.size() != count) throw ConfigError("graph contains a cycle");

    std::vector<std::size_t> sinks;
    for (std::size_t i = 0; i < count; ++i)
        if (consumers[i].empty()) sinks.push_back(i);
    if (sinks.size() != 1) {
        throw ConfigError("graph must have exactly one terminal node, found " + std::to_string(sinks.size()));
    }
    terminal_ = nodes_[sinks.front()].id;

    loss_node_.clear();
    for (const LayerNode& n : nodes_) {
        if (n.kind != LayerKind::softmax_xent) continue;
        if (!loss_node_.empty()) throw ConfigError("graph has more than one loss node");
        loss_node_ = n.id;
    }
    if (!loss_node_.empty() && loss_node_ != terminal_) throw ConfigError("loss node must be terminal");
    if (require_loss && loss_node_.empty()) throw ConfigError("graph has no softmax_xent loss node");

    shapes_.assign(count, Shape{});
    auto shape_of = [&](const std::string& id) -> const Shape& {
        return id == kGraphInput ? input_shape_ : shapes_[index_.at(id)];
    };
    for (std::size_t idx : order_) {
        const LayerNode& n = nodes_[idx];
        const Shape& in = shape_of(n.inputs.front());
        Shape out = in;
        auto expect_param = [&](std::size_t k, Shape s) {
            if (n.params.size() <= k || params_.at(n.params[k]).shape() != s) {
                throw ConfigError("node '" + n.id + "' parameter " + std::to_string(k) + " has shape " +
                                  (n.params.size() > k ? params_.at(n.params[k]).shape().str() : "<missing>") +
                                  ", expected " + s.str() + " for input " + in.str());
            }
        };
        switch (n.kind) {
        case LayerKind::conv: {
            const ConvSpec& sp = n.attrs.conv;
            expect_param(0, Shape{sp.out_channels, in.c, sp.kernel_h, sp.kernel_w});
            if (n.attrs.has_bias) expect_param(1, Shape{sp.out_channels, 1, 1, 1});
            out = conv_output_shape(in, sp);
            break;
        }
        case LayerKind::rcl: {
            const ConvSpec& sp = n.attrs.conv;
            check_rcl_spec(sp);
            expect_param(0, Shape{sp.out_channels, in.c, sp.kernel_h, sp.kernel_w});
            expect_param(1, Shape{sp.out_channels, sp.out_channels, sp.kernel_h, sp.kernel_w});
            expect_param(2, Shape{sp.out_channels, 1, 1, 1});
            out = conv_output_shape(in, sp);
            break;
        }
        case LayerKind::relu:
        case LayerKind::lrn:
        case LayerKind::dropout: break;
        case LayerKind::maxpool:
        case LayerKind::avgpool: out = pool_output_shape(in, n.attrs.pool); break;
        case LayerKind::gap: out = Shape{in.n, in.c, 1, 1}; break;
        case LayerKind::concat: {
            std::size_t channels = 0;
            for (const std::string& id : n.inputs) {
                const Shape& s = shape_of(id);
                if (s.h != in.h || s.w != in.w) {
                    throw ConfigError("concat '" + n.id + "' spatial mismatch: " + in.str() + " vs " + s.str());
                }
                channels += s.c;
            }
            out.c = channels;
            break;
        }
        case LayerKind::residual_add: {
            if (n.inputs.size() != 2) throw ConfigError("residual_add '" + n.id + "' needs two inputs");
            const Shape& b = shape_of(n.inputs[1]);
            if (b != in) {
                throw ConfigError("residual_add '" + n.id + "' shape mismatch: " + in.str() + " vs " + b.str());
            }
            break;
        }
        case LayerKind::softmax_xent:
            if (in.h != 1 || in.w != 1) {
                throw ConfigError("softmax_xent '" + n.id + "' expects (n, K, 1, 1) logits, got " + in.str());
            }
            break;
        }
        if (n.kind != LayerKind::concat && n.kind != LayerKind::residual_add && n.inputs.size() != 1) {
            throw ConfigError("node '" + n.id + "' takes exactly one input");
        }
        shapes_[idx] = out;
    }
    state_.assign(count, NodeState{});
    validated_ = true;
}

template <typename T>
void LayerGraph<T>::require_validated() const {
    if (!validated_) throw InternalError("graph used before validate()");
}

template <typename T>
const LayerNode& LayerGraph<T>::node(const std::string& id) const {
    return nodes_[index_of(id)];
}

template <typename T>
const std::vector<std::size_t>& LayerGraph<T>::order() const {
    require_validated();
    return order_;
}

template <typename T>
const Shape& LayerGraph<T>::output_shape(const std::string& id) const {
    require_validated();
    return id == kGraphInput ? input_shape_ : shapes_[index_of(id)];
}

template <typename T>
const std::string& LayerGraph<T>::terminal() const {
    require_validated();
    return terminal_;
}

template <typename T>
Tensor<T>& LayerGraph<T>::param(const std::string& name) {
    const auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
}

template <typename T>
const Tensor<T>& LayerGraph<T>::param(const std::string& name) const {
    const auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
}

template <typename T>
void LayerGraph<T>::set_steps(std::size_t steps) {
    for (LayerNode& n : nodes_)
        if (n.kind == LayerKind::rcl) n.attrs.steps = steps;
}

// ---- execution ----------------------------------------------------------------

template <typename T>
const Tensor<T>& LayerGraph<T>::input_value(const std::string& id) const {
    return id == kGraphInput ? input_value_ : state_[index_.at(id)].out;
}

template <typename T>
const Tensor<T>& LayerGraph<T>::output(const std::string& id) const {
    require_validated();
    return input_value(id);
}

template <typename T>
std::uint64_t LayerGraph<T>::kink_signature() const {
    require_validated();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto bit = [&h](bool b) {
        h ^= b ? 1u : 0u;
        h *= 0x100000001b3ULL;
    };
    for (std::size_t idx : order_) {
        const LayerNode& n = nodes_[idx];
        if (n.kind == LayerKind::relu) {
            for (T v : input_value(n.inputs.front()).values()) bit(v > T(0));
        } else if (n.kind == LayerKind::rcl) {
            for (const Tensor<T>& pre : state_[idx].rcl.pre) {
                for (T v : pre.values()) bit(v > T(0));
            }
        } else if (n.kind == LayerKind::maxpool) {
            const Tensor<T>& in = input_value(n.inputs.front());
            const Tensor<T> ones(pool_output_shape(in.shape(), n.attrs.pool), T(1));
            const Tensor<T> routed = pool2d_grad(in, n.attrs.pool, ones);
            for (T v : routed.values()) {
                h ^= static_cast<std::uint64_t>(v);
                h *= 0x100000001b3ULL;
            }
        }
    }
    return h;
}

template <typename T>
void LayerGraph<T>::run_node(std::size_t idx, Mode mode, std::span<const int> labels, ForwardResult<T>& result) {
    const LayerNode& n = nodes_[idx];
    NodeState& st = state_[idx];
    const Tensor<T>& in = input_value(n.inputs.front());
    switch (n.kind) {
    case LayerKind::conv: {
        const std::span<const T> bias = n.attrs.has_bias ? params_.at(n.params[1]).values() : std::span<const T>{};
        st.out = conv2d(in, params_.at(n.params[0]), bias, n.attrs.conv);
        break;
    }
    case LayerKind::rcl:
        st.rcl = RclCache<T>{};
        st.out = rcl_forward(in, params_.at(n.params[0]), params_.at(n.params[1]),
                             std::as_const(params_.at(n.params[2])).values(), n.attrs.steps, n.attrs.conv, mode == Mode::train ? &st.rcl : nullptr);
        break;
    case LayerKind::relu: st.out = relu(in); break;
    case LayerKind::lrn: st.out = lrn(in, n.attrs.lrn); break;
    case LayerKind::dropout: st.out = dropout(in, n.attrs.rate, mode, dropout_rng_, &st.mask); break;
    case LayerKind::maxpool:
    case LayerKind::avgpool: st.out = pool2d(in, n.attrs.pool); break;
    case LayerKind::gap: st.out = global_avg_pool(in); break;
    case LayerKind::concat: {
        std::vector<const Tensor<T>*> parts;
        for (const std::string& id : n.inputs) parts.push_back(&input_value(id));
        st.out = concat_channels(parts);
        break;
    }
    case LayerKind::residual_add:
        st.out = in;
        add_inplace(st.out, input_value(n.inputs[1]));
        check_finite(st.out, "residual_add");
        break;
    case LayerKind::softmax_xent: {
        SoftmaxXent<T> sx = softmax_xent(in, labels);
        result.loss = sx.loss;
        result.correct = sx.correct;
        result.output = in;
        result.probs = sx.probs;
        st.out = std::move(sx.probs);
        st.mask = std::move(sx.grad_logits);
        break;
    }
    }
}

template <typename T>
ForwardResult<T> LayerGraph<T>::forward(const Tensor<T>& x, std::span<const int> labels, Mode mode) {
    require_validated();
    const Shape& s = x.shape();
    if (s.c != input_shape_.c || s.h != input_shape_.h || s.w != input_shape_.w) {
        throw ConfigError("batch shape " + s.str() + " does not match graph input " + input_shape_.str());
    }
    if (!labels.empty() && labels.size() != s.n) {
        throw DataError(std::to_string(labels.size()) + " labels for a batch of " + std::to_string(s.n));
    }
    input_value_ = x;
    ForwardResult<T> result;
    for (std::size_t idx : order_) run_node(idx, mode, labels, result);
    if (loss_node_.empty()) result.output = state_[index_.at(terminal_)].out;
    if (!labels.empty() && s.n > 0) result.accuracy = static_cast<double>(result.correct) / static_cast<double>(s.n);
    return result;
}

template <typename T>
void LayerGraph<T>::forward_until(const Tensor<T>& x, const std::string& node_id) {
    require_validated();
    const std::size_t stop = index_of(node_id);
    input_value_ = x;
    ForwardResult<T> unused;
    for (std::size_t idx : order_) {
        if (idx == stop) return;
        run_node(idx, Mode::infer, {}, unused);
    }
}

template <typename T>
StepResult<T> LayerGraph<T>::forward_backward(const Tensor<T>& x, std::span<const int> labels, Mode mode,
                                              const Tensor<T>* seed, bool want_input_grad) {
    ForwardResult<T> fr = forward(x, labels, mode);
    StepResult<T> r;
    r.loss = fr.loss;
    r.correct = fr.correct;
    r.accuracy = fr.accuracy;
    if (mode == Mode::infer) return r;

    const std::size_t count = nodes_.size();
    std::vector<Tensor<T>> grad(count);
    auto accumulate = [&](const std::string& id, Tensor<T>&& g) {
        if (id == kGraphInput) {
            if (!want_input_grad) return;
            if (r.input_grad.empty()) r.input_grad = std::move(g);
            else add_inplace(r.input_grad, g);
            return;
        }
        Tensor<T>& slot = grad[index_.at(id)];
        if (slot.empty()) slot = std::move(g);
        else add_inplace(slot, g);
    };
    auto needs_grad = [&](const std::string& id) { return id != kGraphInput || want_input_grad; };

    if (!loss_node_.empty()) {
        if (labels.empty()) throw DataError("train-mode backward requires labels");
        const std::size_t li = index_.at(loss_node_);
        accumulate(nodes_[li].inputs.front(), Tensor<T>(state_[li].mask));
    } else {
        if (!seed) throw InternalError("backward through a loss-free fragment needs a seed gradient");
        const Tensor<T>& out = state_[index_.at(terminal_)].out;
        if (seed->shape() != out.shape()) {
            throw ConfigError("seed gradient " + seed->shape().str() + " vs output " + out.shape().str());
        }
        grad[index_.at(terminal_)] = *seed;
    }

    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        const std::size_t idx = *it;
        const LayerNode& n = nodes_[idx];
        if (n.kind == LayerKind::softmax_xent || grad[idx].empty()) continue;
        const Tensor<T> g = std::move(grad[idx]);
        grad[idx] = Tensor<T>();
        const std::string& src = n.inputs.front();
        const Tensor<T>& in = input_value(src);
        NodeState& st = state_[idx];
        switch (n.kind) {
        case LayerKind::conv: {
            ConvGrads<T> cg = conv2d_grad(in, params_.at(n.params[0]), n.attrs.conv, g, needs_grad(src));
            r.grads[n.params[0]] = std::move(cg.grad_w);
            if (n.attrs.has_bias) r.grads[n.params[1]] = std::move(cg.grad_b);
            if (needs_grad(src)) accumulate(src, std::move(cg.grad_x));
            break;
        }
        case LayerKind::rcl: {
            RclGrads<T> rg = rcl_backward(st.rcl, params_.at(n.params[0]), params_.at(n.params[1]), g,
                                          needs_grad(src));
            r.grads[n.params[0]] = std::move(rg.grad_w_f);
            r.grads[n.params[1]] = std::move(rg.grad_w_r);
            r.grads[n.params[2]] = std::move(rg.grad_b);
            if (needs_grad(src)) accumulate(src, std::move(rg.grad_x));
            break;
        }
        case LayerKind::relu: accumulate(src, relu_grad(in, g)); break;
        case LayerKind::lrn: accumulate(src, lrn_grad(in, n.attrs.lrn, g)); break;
        case LayerKind::dropout: accumulate(src, dropout_grad(st.mask, g)); break;
        case LayerKind::maxpool:
        case LayerKind::avgpool: accumulate(src, pool2d_grad(in, n.attrs.pool, g)); break;
        case LayerKind::gap: accumulate(src, global_avg_pool_grad(in.shape(), g)); break;
        case LayerKind::concat: {
            std::vector<std::size_t> channels;
            for (const std::string& id : n.inputs) channels.push_back(input_value(id).shape().c);
            std::vector<Tensor<T>> parts = split_channels(g, channels);
            for (std::size_t k = 0; k < parts.size(); ++k) accumulate(n.inputs[k], std::move(parts[k]));
            break;
        }
        case LayerKind::residual_add:
            accumulate(n.inputs[0], Tensor<T>(g));
            accumulate(n.inputs[1], Tensor<T>(g));
            break;
        case LayerKind::softmax_xent: break;
        }
    }
    for (const auto& [name, p] : params_)
        if (!r.grads.count(name)) r.grads[name] = Tensor<T>(p.shape());
    return r;
}

template <typename T>
ParamCount count_params(const LayerGraph<T>& graph) {
    ParamCount pc;
    auto visit = [&](const LayerNode& n) {
        std::size_t c = 0;
        for (const std::string& p : n.params) c += graph.param(p).size();
        if (c == 0) return;
        pc.per_node.emplace_back(n.id, c);
        pc.total += c;
    };
    if (graph.validated()) {
        for (std::size_t idx : graph.order()) visit(graph.nodes()[idx]);
    } else {
        for (const LayerNode& n : graph.nodes()) visit(n);
    }
    return pc;
}

template class LayerGraph<float>;
template class LayerGraph<double>;
template ParamCount count_params<float>(const LayerGraph<float>&);
template ParamCount count_params<double>(const LayerGraph<double>&);

} // namespace ircnn
