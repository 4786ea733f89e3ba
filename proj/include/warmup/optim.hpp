#pragma once

/// \file optim.hpp
///
/// Optimizer state machines: SGD, SGD with heavy-ball momentum, Adam and
/// the two Adam variants that initialize the second moment at step zero
/// (GI-Adam from the squared initial gradient, RI-Adam from a random vector
/// of matching norm). The learning rate is supplied by the caller each step.

#include "numerics.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace warmup {

enum class OptimizerKind { SGD, SGDM, ADAM, GI_ADAM, RI_ADAM };

inline std::string_view to_string(OptimizerKind k)
{
    switch (k) {
    case OptimizerKind::SGD: return "sgd";
    case OptimizerKind::SGDM: return "sgdm";
    case OptimizerKind::ADAM: return "adam";
    case OptimizerKind::GI_ADAM: return "gi-adam";
    case OptimizerKind::RI_ADAM: return "ri-adam";
    }
    return "?";
}

inline OptimizerKind optimizer_from_string(std::string_view s)
{
    if (s == "sgd") return OptimizerKind::SGD;
    if (s == "sgdm") return OptimizerKind::SGDM;
    if (s == "adam") return OptimizerKind::ADAM;
    if (s == "gi-adam" || s == "gi_adam") return OptimizerKind::GI_ADAM;
    if (s == "ri-adam" || s == "ri_adam") return OptimizerKind::RI_ADAM;
    throw std::invalid_argument{"unknown optimizer: " + std::string{s}};
}

inline bool is_adam_family(OptimizerKind k)
{
    return k == OptimizerKind::ADAM || k == OptimizerKind::GI_ADAM || k == OptimizerKind::RI_ADAM;
}

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::SGD;
    double beta = 0.9;  ///< heavy-ball momentum
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double gi_scale = 1.0;  ///< GI-Adam: v0 = gi_scale * g0^2
    /// When false the second moment is used without bias correction. Only
    /// meaningful for the GI-Adam equivalence check.
    bool bias_correct_v = true;
    /// Per-coordinate learning-rate multipliers; empty means all ones.
    FlatVector lr_multipliers;

    void validate() const
    {
        auto unit = [](double b) { return b >= 0.0 && b < 1.0; };
        if (!unit(beta) || !unit(beta1) || !unit(beta2))
            throw std::invalid_argument{"OptimizerConfig: momentum coefficients must lie in [0, 1)"};
        if (!(eps >= 0.0)) throw std::invalid_argument{"OptimizerConfig: eps must be >= 0"};
        if (!(gi_scale >= 1.0)) throw std::invalid_argument{"OptimizerConfig: gi_scale must be >= 1"};
    }
};

struct OptimizerState {
    FlatVector m;
    FlatVector v;  ///< Adam family only; elementwise >= 0
    std::int64_t t = 0;
};

/// Fresh state. GI/RI-Adam need the gradient at initialization, RI-Adam also
/// needs a random stream.
inline OptimizerState init_state(const OptimizerConfig& cfg, std::size_t dim,
                                 std::optional<std::span<const double>> g0 = std::nullopt,
                                 RngStream* rng = nullptr)
{
    cfg.validate();
    OptimizerState s;
    s.m.assign(dim, 0.0);
    if (!is_adam_family(cfg.kind)) return s;
    s.v.assign(dim, 0.0);
    if (cfg.kind == OptimizerKind::ADAM) return s;

    if (!g0 || g0->size() != dim)
        throw std::invalid_argument{"init_state: GI/RI-Adam require the gradient at initialization"};
    if (cfg.kind == OptimizerKind::GI_ADAM) {
        for (std::size_t i = 0; i < dim; ++i) s.v[i] = cfg.gi_scale * (*g0)[i] * (*g0)[i];
        return s;
    }
    if (rng == nullptr) throw std::invalid_argument{"init_state: RI-Adam requires a random stream"};
    double g2_norm = 0.0;
    for (double g : *g0) g2_norm += g * g * g * g;
    g2_norm = std::sqrt(g2_norm);
    double u2_norm = 0.0;
    do {
        for (auto& vi : s.v) {
            const double u = rng->normal();
            vi = u * u;
        }
        u2_norm = norm(s.v);
    } while (u2_norm == 0.0 && dim > 0);
    if (dim > 0) scale(g2_norm / u2_norm, s.v);
    return s;
}

/// One update in place: theta <- theta - eta * step(g).
inline void apply_step(const OptimizerConfig& cfg, OptimizerState& state, std::span<double> theta,
                       std::span<const double> grad, double eta)
{
    const std::size_t n = theta.size();
    if (grad.size() != n || state.m.size() != n)
        throw std::invalid_argument{"apply_step: size mismatch"};
    if (!cfg.lr_multipliers.empty() && cfg.lr_multipliers.size() != n)
        throw std::invalid_argument{"apply_step: lr multiplier size mismatch"};
    if (eta < 0.0) throw std::invalid_argument{"apply_step: negative learning rate"};
    auto mult = [&](std::size_t i) { return cfg.lr_multipliers.empty() ? 1.0 : cfg.lr_multipliers[i]; };

    ++state.t;
    switch (cfg.kind) {
    case OptimizerKind::SGD:
        for (std::size_t i = 0; i < n; ++i) theta[i] -= eta * mult(i) * grad[i];
        return;
    case OptimizerKind::SGDM:
        for (std::size_t i = 0; i < n; ++i) {
            state.m[i] = grad[i] + cfg.beta * state.m[i];
            theta[i] -= eta * mult(i) * state.m[i];
        }
        return;
    default: break;
    }

    if (state.v.size() != n) throw std::invalid_argument{"apply_step: missing second moment"};
    const double t = static_cast<double>(state.t);
    const double m_correction = 1.0 - std::pow(cfg.beta1, t);
    const double v_correction = cfg.bias_correct_v ? 1.0 - std::pow(cfg.beta2, t) : 1.0;
    for (std::size_t i = 0; i < n; ++i) {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grad[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        const double m_hat = state.m[i] / m_correction;
        const double v_hat = state.v[i] / v_correction;
        if (m_hat == 0.0) continue;  // no signal; avoids 0/0 when eps = 0
        theta[i] -= eta * mult(i) * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
}

/// Learning rate under which Adam without second-moment bias correction
/// reproduces GI-Adam at constant `eta_trgt`: eta_trgt * sqrt(1 - beta2^t).
inline double gi_equivalence_schedule(double eta_trgt, double beta2, std::int64_t t)
{
    if (t < 1) throw std::invalid_argument{"gi_equivalence_schedule: t must be >= 1"};
    return eta_trgt * std::sqrt(1.0 - std::pow(beta2, static_cast<double>(t)));
}

}  // namespace warmup
