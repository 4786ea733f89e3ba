#pragma once

/// \file instability.hpp
///
/// Forward-pass-only estimation of the critical learning rate eta_c (the
/// smallest step size whose single update increases the loss), the offset
/// warmup built from it, and the persistent catapult warmup controller.

#include "model.hpp"
#include "optim.hpp"
#include "schedule.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace warmup {

struct SearchConfig {
    double eta0 = 1e-4;
    double growth = 2.0;
    double delta = 0.1;  ///< 0.01 is the better choice for Adam-family optimizers
    double eta_cap = std::numeric_limits<double>::infinity();
    /// Doublings allowed before concluding the loss never increases.
    int max_doublings = 60;

    static double default_delta(OptimizerKind kind) { return is_adam_family(kind) ? 0.01 : 0.1; }

    void validate() const
    {
        if (!(eta0 > 0.0)) throw std::invalid_argument{"SearchConfig: eta0 must be positive"};
        if (!(growth > 1.0)) throw std::invalid_argument{"SearchConfig: growth must exceed 1"};
        if (!(delta > 0.0 && delta <= 1.0)) throw std::invalid_argument{"SearchConfig: delta must lie in (0, 1]"};
        if (!(eta_cap > 0.0)) throw std::invalid_argument{"SearchConfig: eta_cap must be positive"};
    }
};

/// One optimizer step from a fixed point, scored by a single forward pass.
///
/// The loss and gradient at theta0 are computed once at construction. Every
/// call starts from fresh optimizer state, so the result depends on eta only.
template <Objective F>
class OneStepTrial {
public:
    OneStepTrial(const F& f, std::span<const double> theta0, OptimizerConfig cfg, std::uint64_t seed = 0)
        : f_{&f}, cfg_{std::move(cfg)}, theta0_(theta0.begin(), theta0.end()), grad0_(theta0.size()), seed_{seed}
    {
        loss0_ = f.loss_and_grad(theta0_, grad0_);
    }

    double initial_loss() const noexcept { return loss0_; }
    std::span<const double> initial_gradient() const noexcept { return grad0_; }
    int forward_passes() const noexcept { return passes_; }

    double operator()(double eta)
    {
        FlatVector theta = theta0_;
        RngStream rng{seed_};
        auto state = init_state(cfg_, theta.size(), std::span<const double>{grad0_}, &rng);
        apply_step(cfg_, state, theta, grad0_, eta);
        ++passes_;
        return f_->loss(theta);
    }

private:
    const F* f_;
    OptimizerConfig cfg_;
    FlatVector theta0_;
    FlatVector grad0_;
    double loss0_ = 0.0;
    std::uint64_t seed_;
    int passes_ = 0;
};

/// Loss after one step of size eta, from the point under study.
using TrialFn = std::function<double(double)>;

struct SearchStep {
    double eta;
    double loss;
};

struct Bracket {
    double lower = 0.0;
    double upper = 0.0;
    double upper_loss = 0.0;
    bool capped = false;      ///< eta_cap reached without a loss increase
    bool degenerate = false;  ///< the loss already increased at eta0
    bool exhausted = false;   ///< no increase within max_doublings
    int forward_passes = 0;
    std::vector<SearchStep> trace;
};

struct CriticalLrEstimate {
    double lower = 0.0;
    double upper = 0.0;
    double eta_c = 0.0;
    int forward_passes = 0;
    bool capped = false;
    bool degenerate = false;
    bool exhausted = false;
    std::vector<SearchStep> trace;
};

namespace detail {

inline bool increased(double loss, double reference) { return !(loss < reference); }

}  // namespace detail

/// Grows eta geometrically from eta0 until one step no longer decreases the
/// loss; the last two step sizes bracket eta_c. Non-finite losses count as
/// increases.
inline Bracket exponential_search(const TrialFn& trial, double initial_loss, const SearchConfig& cfg)
{
    cfg.validate();
    Bracket b;
    double eta = std::min(cfg.eta0, cfg.eta_cap);
    double loss = trial(eta);
    ++b.forward_passes;
    b.trace.push_back({eta, loss});
    if (detail::increased(loss, initial_loss)) {
        b.degenerate = true;
        b.lower = eta / cfg.growth;
        b.upper = eta;
        b.upper_loss = loss;
        return b;
    }
    int doublings = 0;
    double previous = eta;
    while (!detail::increased(loss, initial_loss)) {
        if (eta >= cfg.eta_cap) {
            b.capped = true;
            b.lower = b.upper = cfg.eta_cap;
            b.upper_loss = loss;
            return b;
        }
        if (doublings == cfg.max_doublings) {
            b.exhausted = true;
            b.lower = b.upper = eta;
            b.upper_loss = loss;
            return b;
        }
        previous = eta;
        eta = std::min(eta * cfg.growth, cfg.eta_cap);  // the cap itself is the last trial
        ++doublings;
        loss = trial(eta);
        ++b.forward_passes;
        b.trace.push_back({eta, loss});
    }
    b.upper = eta;
    b.lower = previous;
    b.upper_loss = loss;
    return b;
}

/// Bisects the bracket until a step at the upper end raises the loss by at
/// most a factor (1 + delta); returns that upper end as eta_c.
inline CriticalLrEstimate binary_search(const TrialFn& trial, double initial_loss, const SearchConfig& cfg,
                                        const Bracket& bracket)
{
    cfg.validate();
    if (bracket.capped || bracket.exhausted)
        throw std::invalid_argument{"binary_search: bracket has no loss increase to refine"};
    if (!(bracket.lower < bracket.upper)) throw std::invalid_argument{"binary_search: inverted bracket"};
    CriticalLrEstimate est;
    est.lower = bracket.lower;
    est.upper = bracket.upper;
    est.forward_passes = bracket.forward_passes;
    est.trace = bracket.trace;
    double upper_loss = bracket.upper_loss;
    const double limit = initial_loss * (1.0 + cfg.delta);
    while (!(upper_loss <= limit)) {
        const double mid = 0.5 * (est.lower + est.upper);
        if (!(mid > est.lower && mid < est.upper)) break;  // bracket exhausted to rounding
        const double loss = trial(mid);
        ++est.forward_passes;
        est.trace.push_back({mid, loss});
        if (loss < initial_loss) {
            est.lower = mid;
        } else {
            est.upper = mid;
            upper_loss = loss;
        }
    }
    est.eta_c = est.upper;
    return est;
}

/// Both search stages. Capped, degenerate and exhausted brackets skip the
/// bisection: eta_c is then the cap, eta0, or the last step size tried.
inline CriticalLrEstimate estimate_critical_lr(const TrialFn& trial, double initial_loss, const SearchConfig& cfg)
{
    const Bracket b = exponential_search(trial, initial_loss, cfg);
    if (b.capped || b.degenerate || b.exhausted) {
        CriticalLrEstimate est;
        est.lower = b.lower;
        est.upper = b.upper;
        est.eta_c = b.upper;
        est.forward_passes = b.forward_passes;
        est.capped = b.capped;
        est.degenerate = b.degenerate;
        est.exhausted = b.exhausted;
        est.trace = b.trace;
        return est;
    }
    return binary_search(trial, initial_loss, cfg, b);
}

/// Cost accounting for starting warmup at eta_c.
struct EtaInitSelection {
    CriticalLrEstimate estimate;
    double eta_init = 0.0;
    ScheduleSpec schedule;
    std::int64_t reach_step = 0;
    double steps_saved = 0.0;  ///< T_wrm * eta_c / eta_trgt - T_fp / 2
    bool fell_back = false;    ///< no loss increase found; eta_init = eta_trgt / 10
};

inline EtaInitSelection select_eta_init(const TrialFn& trial, double initial_loss, SearchConfig cfg, double eta_trgt,
                                        std::int64_t warmup_steps)
{
    if (!(eta_trgt > 0.0)) throw std::invalid_argument{"select_eta_init: eta_trgt must be positive"};
    cfg.eta_cap = eta_trgt;
    EtaInitSelection sel;
    sel.estimate = estimate_critical_lr(trial, initial_loss, cfg);
    if (sel.estimate.exhausted) {
        sel.fell_back = true;
        sel.eta_init = eta_trgt / 10.0;
    } else {
        sel.eta_init = sel.estimate.eta_c;
    }
    sel.schedule = offset_warmup(sel.eta_init, eta_trgt, warmup_steps);
    sel.reach_step = sel.schedule.reach_step();
    const double ratio = std::min(sel.eta_init, eta_trgt) / eta_trgt;
    sel.steps_saved = static_cast<double>(warmup_steps) * ratio - 0.5 * sel.estimate.forward_passes;
    return sel;
}

// ----------------------------------------------------------------------------
// Persistent catapult warmup
// ----------------------------------------------------------------------------

struct PcwConfig {
    double eta_trgt = 0.0;
    double delta = 0.1;
    double eta0 = 1e-4;          ///< initial guess for the first search only
    std::int64_t max_wait = 2000;  ///< steps allowed without returning below the reference
};

enum class PcwPhase { SEARCHING, WAITING, DONE, STALLED };

inline std::string_view to_string(PcwPhase p)
{
    switch (p) {
    case PcwPhase::SEARCHING: return "searching";
    case PcwPhase::WAITING: return "waiting";
    case PcwPhase::DONE: return "done";
    case PcwPhase::STALLED: return "PCW_STALLED";
    }
    return "?";
}

struct PcwCatapult {
    std::int64_t step;          ///< step at which the learning rate was raised
    double eta_before;
    double eta_after;
    double reference_loss;
    int forward_passes;
    std::int64_t returned_step = -1;  ///< first later step with loss below the reference
};

struct PcwAction {
    double eta;
    bool searched = false;
    PcwPhase phase;
};

/// Catapult-driven warmup: at each new stable reference point (a loss below
/// the previous reference), search eta_c and jump to its upper estimate.
/// Stops once eta reaches eta_trgt; gives up with PCW_STALLED if the loss
/// stays above the reference for more than `max_wait` steps.
class PersistentCatapultWarmup {
public:
    /// Search at `theta` with the given initial guess and cap.
    using SearchFn = std::function<CriticalLrEstimate(std::span<const double> theta, const SearchConfig&)>;

    explicit PersistentCatapultWarmup(PcwConfig cfg) : cfg_{cfg}
    {
        if (!(cfg_.eta_trgt > 0.0)) throw std::invalid_argument{"PCW: eta_trgt must be positive"};
        if (cfg_.max_wait < 1) throw std::invalid_argument{"PCW: max_wait must be >= 1"};
    }

    double eta() const noexcept { return eta_; }
    PcwPhase phase() const noexcept { return phase_; }
    bool finished() const noexcept { return phase_ == PcwPhase::DONE || phase_ == PcwPhase::STALLED; }
    double reference_loss() const noexcept { return ref_loss_; }
    std::span<const double> reference_point() const noexcept { return ref_theta_; }
    const std::vector<PcwCatapult>& catapults() const noexcept { return catapults_; }
    int total_forward_passes() const noexcept { return passes_; }

    /// Called once per training step with the current point and its loss;
    /// returns the learning rate for this step.
    PcwAction step(std::int64_t t, std::span<const double> theta, double loss, const SearchFn& search)
    {
        track_return(t, loss);
        if (finished()) return {eta_, false, phase_};
        const bool first = ref_theta_.empty();
        if (first || loss < ref_loss_) {
            phase_ = PcwPhase::SEARCHING;
            SearchConfig sc;
            sc.eta0 = first ? cfg_.eta0 : eta_;
            sc.delta = cfg_.delta;
            sc.eta_cap = cfg_.eta_trgt;
            const CriticalLrEstimate est = search(theta, sc);
            passes_ += est.forward_passes;
            const double before = eta_;
            double next = est.capped || est.exhausted ? cfg_.eta_trgt : est.eta_c;
            eta_ = std::min(std::max(eta_, next), cfg_.eta_trgt);
            ref_theta_.assign(theta.begin(), theta.end());
            ref_loss_ = loss;
            catapults_.push_back({t, before, eta_, loss, est.forward_passes});
            waited_ = 0;
            phase_ = eta_ >= cfg_.eta_trgt ? PcwPhase::DONE : PcwPhase::WAITING;
            return {eta_, true, phase_};
        }
        phase_ = PcwPhase::WAITING;
        if (++waited_ > cfg_.max_wait) phase_ = PcwPhase::STALLED;
        return {eta_, false, phase_};
    }

private:
    void track_return(std::int64_t t, double loss)
    {
        if (catapults_.empty()) return;
        auto& last = catapults_.back();
        if (last.returned_step < 0 && t > last.step && loss < last.reference_loss) last.returned_step = t;
    }

    PcwConfig cfg_;
    double eta_ = 0.0;
    PcwPhase phase_ = PcwPhase::SEARCHING;
    FlatVector ref_theta_;
    double ref_loss_ = std::numeric_limits<double>::infinity();
    std::int64_t waited_ = 0;
    int passes_ = 0;
    std::vector<PcwCatapult> catapults_;
};

}  // namespace warmup
