#pragma once

/// \file schedule.hpp
///
/// Learning-rate schedules. Steps are 1-based: the update applied at step t
/// uses lr_at(spec, t), so a warmup of length 1 is a constant learning rate.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>

namespace warmup {

enum class ScheduleKind { CONST, LINEAR_WARMUP, COSINE, WARMUP_THEN_COSINE, GI_IMPLICIT };

inline std::string_view to_string(ScheduleKind k)
{
    switch (k) {
    case ScheduleKind::CONST: return "const";
    case ScheduleKind::LINEAR_WARMUP: return "linear-warmup";
    case ScheduleKind::COSINE: return "cosine";
    case ScheduleKind::WARMUP_THEN_COSINE: return "warmup-cosine";
    case ScheduleKind::GI_IMPLICIT: return "gi-implicit";
    }
    return "?";
}

inline ScheduleKind schedule_from_string(std::string_view s)
{
    if (s == "const") return ScheduleKind::CONST;
    if (s == "linear-warmup" || s == "warmup") return ScheduleKind::LINEAR_WARMUP;
    if (s == "cosine") return ScheduleKind::COSINE;
    if (s == "warmup-cosine") return ScheduleKind::WARMUP_THEN_COSINE;
    if (s == "gi-implicit") return ScheduleKind::GI_IMPLICIT;
    throw std::invalid_argument{"unknown schedule: " + std::string{s}};
}

struct ScheduleSpec {
    ScheduleKind kind = ScheduleKind::CONST;
    double eta_init = 0.0;
    double eta_trgt = 0.0;
    std::int64_t warmup_steps = 1;
    double eta_min = 0.0;
    std::int64_t cosine_steps = 1;
    double rho = 1.0;
    double beta2 = 0.999;  ///< GI_IMPLICIT only
    /// Offset warmup: slope eta_trgt / warmup_steps regardless of eta_init.
    bool offset = false;

    static ScheduleSpec constant(double eta)
    {
        ScheduleSpec s;
        s.kind = ScheduleKind::CONST;
        s.eta_trgt = eta;
        return s;
    }

    static ScheduleSpec linear_warmup(double eta_init, double eta_trgt, std::int64_t warmup_steps)
    {
        ScheduleSpec s;
        s.kind = ScheduleKind::LINEAR_WARMUP;
        s.eta_init = eta_init;
        s.eta_trgt = eta_trgt;
        s.warmup_steps = warmup_steps;
        s.validate();
        return s;
    }

    /// Defaults to rho = 1 and eta_min = eta_trgt / 10.
    static ScheduleSpec cosine(double eta_trgt, std::int64_t cosine_steps, double eta_min = -1.0, double rho = 1.0)
    {
        ScheduleSpec s;
        s.kind = ScheduleKind::COSINE;
        s.eta_trgt = eta_trgt;
        s.eta_min = eta_min < 0.0 ? eta_trgt / 10.0 : eta_min;
        s.cosine_steps = cosine_steps;
        s.rho = rho;
        s.validate();
        return s;
    }

    static ScheduleSpec warmup_then_cosine(double eta_init, double eta_trgt, std::int64_t warmup_steps,
                                           std::int64_t cosine_steps, double eta_min = -1.0, double rho = 1.0)
    {
        ScheduleSpec s = cosine(eta_trgt, cosine_steps, eta_min, rho);
        s.kind = ScheduleKind::WARMUP_THEN_COSINE;
        s.eta_init = eta_init;
        s.warmup_steps = warmup_steps;
        s.validate();
        return s;
    }

    static ScheduleSpec gi_implicit(double eta_trgt, double beta2)
    {
        ScheduleSpec s;
        s.kind = ScheduleKind::GI_IMPLICIT;
        s.eta_trgt = eta_trgt;
        s.beta2 = beta2;
        return s;
    }

    /// Per-step increase during warmup.
    double warmup_rate() const
    {
        return offset ? eta_trgt / static_cast<double>(warmup_steps)
                      : (eta_trgt - eta_init) / static_cast<double>(warmup_steps);
    }

    /// First step at which the warmup reaches eta_trgt.
    std::int64_t reach_step() const
    {
        if (!offset) return warmup_steps;
        if (eta_init >= eta_trgt) return 1;
        const auto t = static_cast<std::int64_t>(
            std::ceil(static_cast<double>(warmup_steps) * (1.0 - eta_init / eta_trgt)));
        return std::max<std::int64_t>(t, 1);
    }

    void validate() const
    {
        if (eta_init < 0.0 || eta_trgt < 0.0) throw std::invalid_argument{"ScheduleSpec: negative learning rate"};
        if (warmup_steps < 1) throw std::invalid_argument{"ScheduleSpec: warmup_steps must be >= 1"};
        if (cosine_steps < 1) throw std::invalid_argument{"ScheduleSpec: cosine_steps must be >= 1"};
        if (rho < 0.0) throw std::invalid_argument{"ScheduleSpec: rho must be >= 0"};
    }
};

namespace detail {

inline double warmup_lr(const ScheduleSpec& s, std::int64_t t)
{
    if (t >= s.reach_step()) return s.eta_trgt;
    const double frac = static_cast<double>(t) / static_cast<double>(s.warmup_steps);
    const double eta = s.offset ? s.eta_init + s.eta_trgt * frac : s.eta_init + (s.eta_trgt - s.eta_init) * frac;
    return s.offset ? std::min(eta, s.eta_trgt) : eta;
}

/// t counts from the start of the decay.
inline double cosine_lr(const ScheduleSpec& s, std::int64_t t)
{
    if (s.rho == 0.0) return s.eta_trgt;
    if (t >= s.cosine_steps) return s.eta_min;
    const double phase = std::numbers::pi * static_cast<double>(t) / static_cast<double>(s.cosine_steps);
    const double shape = std::pow(0.5 * (1.0 + std::cos(phase)), s.rho);
    return s.eta_min + (s.eta_trgt - s.eta_min) * shape;
}

}  // namespace detail

inline double lr_at(const ScheduleSpec& s, std::int64_t t)
{
    if (t < 0) throw std::invalid_argument{"lr_at: negative step"};
    switch (s.kind) {
    case ScheduleKind::CONST: return s.eta_trgt;
    case ScheduleKind::LINEAR_WARMUP: return detail::warmup_lr(s, t);
    case ScheduleKind::COSINE: return detail::cosine_lr(s, t);
    case ScheduleKind::WARMUP_THEN_COSINE:
        return t <= s.warmup_steps ? detail::warmup_lr(s, t) : detail::cosine_lr(s, t - s.warmup_steps);
    case ScheduleKind::GI_IMPLICIT:
        return t == 0 ? 0.0 : s.eta_trgt * std::sqrt(1.0 - std::pow(s.beta2, static_cast<double>(t)));
    }
    return 0.0;
}

/// Warmup that starts at the measured critical learning rate and climbs with
/// slope eta_trgt / warmup_steps, reaching eta_trgt at `reach_step()`.
inline ScheduleSpec offset_warmup(double eta_c, double eta_trgt, std::int64_t warmup_steps)
{
    if (!(eta_trgt > 0.0)) throw std::invalid_argument{"offset_warmup: eta_trgt must be positive"};
    if (eta_c < 0.0) throw std::invalid_argument{"offset_warmup: eta_c must be >= 0"};
    ScheduleSpec s;
    s.kind = ScheduleKind::LINEAR_WARMUP;
    s.eta_init = std::min(eta_c, eta_trgt);
    s.eta_trgt = eta_trgt;
    s.warmup_steps = warmup_steps;
    s.offset = true;
    s.validate();
    return s;
}

}  // namespace warmup
