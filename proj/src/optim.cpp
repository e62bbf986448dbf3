#include "ircnn/optim.hpp"

#include <algorithm>
#include <cmath>

namespace ircnn {

void SgdConfig::validate() const {
    if (!(lr0 > 0.0)) throw ConfigError("sgd: lr0 must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("sgd: momentum must lie in [0, 1)");
    if (!(decay >= 0.0)) throw ConfigError("sgd: decay must be nonnegative");
}

void AdamConfig::validate() const {
    if (!(lr > 0.0)) throw ConfigError("adam: lr must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ConfigError("adam: beta1 and beta2 must lie in [0, 1)");
    }
    if (!(eps > 0.0) || !(decay >= 0.0)) throw ConfigError("adam: eps must be positive and decay nonnegative");
}

void EveConfig::validate() const {
    if (!(lr > 0.0)) throw ConfigError("eve: lr must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ConfigError("eve: beta1 and beta2 must lie in [0, 1)");
    }
    // beta3 = 1 freezes d and is allowed: it reduces EVE to Adam.
    if (!(beta3 >= 0.0 && beta3 <= 1.0)) throw ConfigError("eve: beta3 must lie in [0, 1]");
    if (!(k > 0.0 && k < K)) throw ConfigError("eve: thresholds must satisfy 0 < k < K");
    if (!(eps > 0.0) || !(decay >= 0.0)) throw ConfigError("eve: eps must be positive and decay nonnegative");
}

std::string_view optimizer_name(OptimizerKind k) {
    switch (k) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::adam: return "adam";
    case OptimizerKind::eve: return "eve";
    }
    return "?";
}

OptimizerKind parse_optimizer(std::string_view name) {
    if (name == "sgd") return OptimizerKind::sgd;
    if (name == "adam") return OptimizerKind::adam;
    if (name == "eve") return OptimizerKind::eve;
    throw ConfigError("unknown optimizer '" + std::string(name) + "' (expected sgd, adam or eve)");
}

void OptimizerConfig::validate() const {
    switch (kind) {
    case OptimizerKind::sgd: sgd.validate(); break;
    case OptimizerKind::adam: adam.validate(); break;
    case OptimizerKind::eve: eve.validate(); break;
    }
    if (!(l2 >= 0.0)) throw ConfigError("l2 coefficient must be nonnegative");
}

namespace {

template <typename T>
void check_grads(const ParamMap<T>& params, const ParamMap<T>& grads) {
    for (const auto& [name, p] : params) {
        auto it = grads.find(name);
        if (it == grads.end()) throw InternalError("no gradient for parameter '" + name + "'");
        if (!(it->second.shape() == p.shape())) {
            throw InternalError("gradient shape " + it->second.shape().str() + " does not match parameter '" + name +
                                "' " + p.shape().str());
        }
        for (T g : it->second.values()) {
            if (!std::isfinite(static_cast<double>(g))) {
                throw TrainingError("non-finite gradient in parameter '" + name + "'");
            }
        }
    }
}

std::vector<double>& buffer(std::map<std::string, std::vector<double>>& m, const std::string& name, std::size_t n) {
    std::vector<double>& b = m[name];
    if (b.empty()) b.assign(n, 0.0);
    if (b.size() != n) throw InternalError("optimizer buffer size mismatch for '" + name + "'");
    return b;
}

// Shared by Adam and EVE so the two agree bitwise whenever their step sizes do.
template <typename T>
void adam_update(OptimizerState& state, ParamMap<T>& params, const ParamMap<T>& grads, double step, double beta1,
                 double beta2, double eps) {
    const double t = static_cast<double>(state.t + 1);
    const double c1 = 1.0 - std::pow(beta1, t);
    const double c2 = 1.0 - std::pow(beta2, t);
    for (auto& [name, p] : params) {
        const Tensor<T>& g = grads.at(name);
        std::vector<double>& m = buffer(state.m, name, p.size());
        std::vector<double>& v = buffer(state.v, name, p.size());
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = static_cast<double>(g[i]);
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            const double m_hat = m[i] / c1;
            const double v_hat = v[i] / c2;
            p[i] = static_cast<T>(static_cast<double>(p[i]) - step * m_hat / std::sqrt(v_hat + eps));
        }
    }
    ++state.t;
}

} // namespace

template <typename T>
void sgd_step(OptimizerState& state, ParamMap<T>& params, const ParamMap<T>& grads, const SgdConfig& cfg) {
    check_grads(params, grads);
    const double lr = cfg.lr0 / (1.0 + cfg.decay * static_cast<double>(state.t));
    const double mu = cfg.momentum;
    for (auto& [name, p] : params) {
        const Tensor<T>& g = grads.at(name);
        std::vector<double>& vel = buffer(state.velocity, name, p.size());
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = static_cast<double>(g[i]);
            vel[i] = mu * vel[i] - lr * gi;
            const double theta = static_cast<double>(p[i]);
            p[i] = static_cast<T>(cfg.nesterov ? theta + mu * vel[i] - lr * gi : theta + vel[i]);
        }
    }
    state.last_lr = lr;
    ++state.t;
}

template <typename T>
void adam_step(OptimizerState& state, ParamMap<T>& params, const ParamMap<T>& grads, const AdamConfig& cfg) {
    check_grads(params, grads);
    const double lr = cfg.lr / (1.0 + cfg.decay * static_cast<double>(state.t));
    state.last_lr = lr;
    adam_update(state, params, grads, lr, cfg.beta1, cfg.beta2, cfg.eps);
}

template <typename T>
void eve_step(OptimizerState& state, ParamMap<T>& params, const ParamMap<T>& grads, double batch_loss,
              const EveConfig& cfg) {
    if (!std::isfinite(batch_loss)) throw TrainingError("non-finite batch loss passed to eve");
    check_grads(params, grads);
    if (state.t == 0) {
        state.d = 1.0;
    } else {
        const double lo = std::min(batch_loss, state.prev_loss);
        const double r = std::abs(batch_loss - state.prev_loss) / std::max(cfg.eps, lo);
        const double c = std::clamp(r, cfg.k, cfg.K);
        state.d = cfg.beta3 * state.d + (1.0 - cfg.beta3) * c;
    }
    state.prev_loss = batch_loss;
    const double lr = cfg.lr / (1.0 + cfg.decay * static_cast<double>(state.t));
    const double step = lr / state.d;
    state.last_lr = step;
    adam_update(state, params, grads, step, cfg.beta1, cfg.beta2, cfg.eps);
}

template <typename T>
void apply_l2(ParamMap<T>& grads, const ParamMap<T>& params, const std::map<std::string, ParamInfo>& info,
              double l2) {
    if (l2 == 0.0) return;
    for (const auto& [name, p] : params) {
        if (!info.at(name).regularized) continue;
        Tensor<T>& g = grads.at(name);
        for (std::size_t i = 0; i < p.size(); ++i) {
            g[i] = static_cast<T>(static_cast<double>(g[i]) + l2 * static_cast<double>(p[i]));
        }
    }
}

template <typename T>
void optimizer_step(OptimizerState& state, const OptimizerConfig& cfg, LayerGraph<T>& graph, ParamMap<T>& grads,
                    double batch_loss) {
    apply_l2(grads, graph.params(), graph.param_info(), cfg.l2);
    switch (cfg.kind) {
    case OptimizerKind::sgd: sgd_step(state, graph.params(), grads, cfg.sgd); break;
    case OptimizerKind::adam: adam_step(state, graph.params(), grads, cfg.adam); break;
    case OptimizerKind::eve: eve_step(state, graph.params(), grads, batch_loss, cfg.eve); break;
    }
}

double scheduled_lr(const OptimizerConfig& cfg, std::uint64_t t) {
    const double td = static_cast<double>(t);
    switch (cfg.kind) {
    case OptimizerKind::sgd: return cfg.sgd.lr0 / (1.0 + cfg.sgd.decay * td);
    case OptimizerKind::adam: return cfg.adam.lr / (1.0 + cfg.adam.decay * td);
    case OptimizerKind::eve: return cfg.eve.lr / (1.0 + cfg.eve.decay * td);
    }
    return 0.0;
}

#define IRCNN_INSTANTIATE_OPTIM(T)                                                                          \
    template void sgd_step<T>(OptimizerState&, ParamMap<T>&, const ParamMap<T>&, const SgdConfig&);        \
    template void adam_step<T>(OptimizerState&, ParamMap<T>&, const ParamMap<T>&, const AdamConfig&);      \
    template void eve_step<T>(OptimizerState&, ParamMap<T>&, const ParamMap<T>&, double, const EveConfig&); \
    template void apply_l2<T>(ParamMap<T>&, const ParamMap<T>&, const std::map<std::string, ParamInfo>&,    \
                              double);                                                                      \
    template void optimizer_step<T>(OptimizerState&, const OptimizerConfig&, LayerGraph<T>&, ParamMap<T>&,  \
                                    double);

IRCNN_INSTANTIATE_OPTIM(float)
IRCNN_INSTANTIATE_OPTIM(double)

#undef IRCNN_INSTANTIATE_OPTIM

} // namespace ircnn
