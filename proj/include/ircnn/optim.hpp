#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "ircnn/graph.hpp"

namespace ircnn {

struct SgdConfig {
    double lr0 = 0.01;
    double momentum = 0.9;
    double decay = 9.99e-7;
    bool nesterov = true;
    void validate() const;
};

struct AdamConfig {
    double lr = 1e-3;
    double decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    void validate() const;
};

struct EveConfig {
    double lr = 1e-4;
    double decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.9;
    double beta3 = 0.9;
    double k = 0.1;
    double K = 10.0;
    double eps = 1e-8;
    void validate() const;
};

enum class OptimizerKind { sgd, adam, eve };

std::string_view optimizer_name(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view name);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::sgd;
    SgdConfig sgd;
    AdamConfig adam;
    EveConfig eve;
    double l2 = 0.002;
    void validate() const;
};

/// Buffers are kept in double regardless of the parameter type.
struct OptimizerState {
    std::uint64_t t = 0;  // completed updates
    std::map<std::string, std::vector<double>> velocity;
    std::map<std::string, std::vector<double>> m;
    std::map<std::string, std::vector<double>> v;
    double d = 1.0;
    double prev_loss = 0.0;
    double last_lr = 0.0;  // effective step size of the most recent update (EVE: after division by d)

    bool operator==(const OptimizerState&) const = default;
};

/// lr_t = lr0 / (1 + decay * t); v <- mu v - lr_t g;
/// nesterov: theta <- theta + mu v - lr_t g, otherwise theta <- theta + v.
template <typename T>
void sgd_step(OptimizerState& state, ParamMap<T>& params, const ParamMap<T>& grads, const SgdConfig& cfg);

/// Bias-corrected Adam with eps inside the square root:
/// theta <- theta - lr_t * m_hat / sqrt(v_hat + eps).
template <typename T>
void adam_step(OptimizerState& state, ParamMap<T>& params, const ParamMap<T>& grads, const AdamConfig& cfg);

/// Adam whose step size lr / (1 + decay * t) is divided by d, a smoothed,
/// clipped relative change of the batch loss.
template <typename T>
void eve_step(OptimizerState& state, ParamMap<T>& params, const ParamMap<T>& grads, double batch_loss,
              const EveConfig& cfg);

/// g <- g + l2 * theta for the kernels flagged as regularized.
template <typename T>
void apply_l2(ParamMap<T>& grads, const ParamMap<T>& params, const std::map<std::string, ParamInfo>& info, double l2);

/// L2 followed by the configured update.
template <typename T>
void optimizer_step(OptimizerState& state, const OptimizerConfig& cfg, LayerGraph<T>& graph, ParamMap<T>& grads,
                    double batch_loss);

/// Step size the next update will use (before EVE's division by d).
double scheduled_lr(const OptimizerConfig& cfg, std::uint64_t t);

} // namespace ircnn
