#pragma once

/// \file training.hpp
///
/// The training loop: minibatch updates under a schedule (or the persistent
/// catapult controller), curvature probes at a fixed cadence, and the event
/// detector that classifies each run as converged, diverged or failed.

#include "../instability.hpp"
#include "../model.hpp"
#include "../optim.hpp"
#include "../probe.hpp"
#include "../schedule.hpp"
#include "dataset.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace warmup {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

enum class RunStatus { CONVERGED, DIVERGED, FAILED };
enum class Event { NONE, LOSS_SPIKE, DIVERGED, FAILED };

inline std::string_view to_string(RunStatus s)
{
    switch (s) {
    case RunStatus::CONVERGED: return "CONVERGED";
    case RunStatus::DIVERGED: return "DIVERGED";
    case RunStatus::FAILED: return "FAILED";
    }
    return "?";
}

inline RunStatus status_from_string(std::string_view s)
{
    if (s == "CONVERGED" || s == "converged") return RunStatus::CONVERGED;
    if (s == "DIVERGED" || s == "diverged") return RunStatus::DIVERGED;
    if (s == "FAILED" || s == "failed") return RunStatus::FAILED;
    throw std::invalid_argument{"unknown status: " + std::string{s}};
}

inline std::string_view to_string(Event e)
{
    switch (e) {
    case Event::NONE: return "none";
    case Event::LOSS_SPIKE: return "LOSS_SPIKE";
    case Event::DIVERGED: return "DIVERGED";
    case Event::FAILED: return "FAILED";
    }
    return "?";
}

/// One logged step. Quantities not measured at this step are NaN.
struct TrajectoryRow {
    std::int64_t step = 0;
    double lr = kNaN;
    double minibatch_loss = kNaN;
    double train_loss = kNaN;
    double test_loss = kNaN;
    double test_acc = kNaN;
    double sharpness = kNaN;
    double precond_sharpness = kNaN;
    double thr_gd = kNaN;
    double thr_mom = kNaN;
    double thr_adam = kNaN;
    Event event = Event::NONE;
};

struct Metrics {
    double train_loss = kNaN;
    double train_acc = kNaN;
    double test_loss = kNaN;
    double test_acc = kNaN;
};

// ----------------------------------------------------------------------------
// Problems
// ----------------------------------------------------------------------------

/// What the training loop trains: a parameter dimension, a (possibly
/// stochastic) per-step gradient, and full-batch loss / metrics.
class TrainingProblem {
public:
    virtual ~TrainingProblem() = default;

    virtual std::size_t dim() const = 0;
    /// Number of classes, 0 for regression-style problems.
    virtual int classes() const = 0;
    virtual double step_loss_and_grad(std::int64_t step, std::span<const double> theta, std::span<double> grad) = 0;
    virtual double loss(std::span<const double> theta) const = 0;
    virtual double loss_and_grad(std::span<const double> theta, std::span<double> grad) const = 0;
    virtual Metrics evaluate(std::span<const double> theta) const = 0;
    /// True if some layer outputs exactly zero on the whole train set.
    virtual bool has_dead_layer(std::span<const double>) const { return false; }
    /// Full-batch H v. The default differences the gradient.
    virtual void hessian_vector(std::span<const double> theta, std::span<const double> v, std::span<double> out) const;
};

/// Full-batch objective view of a problem, usable by the probes and searches.
class FullBatchObjective {
public:
    explicit FullBatchObjective(const TrainingProblem& p) : p_{&p} {}
    std::size_t dim() const { return p_->dim(); }
    double loss(std::span<const double> theta) const { return p_->loss(theta); }
    double loss_and_grad(std::span<const double> theta, std::span<double> grad) const
    {
        return p_->loss_and_grad(theta, grad);
    }
    void hessian_vector(std::span<const double> theta, std::span<const double> v, std::span<double> out) const
    {
        p_->hessian_vector(theta, v, out);
    }

private:
    const TrainingProblem* p_;
};

static_assert(ExactCurvature<FullBatchObjective>);

namespace detail {

struct GradientOnly {
    const TrainingProblem* p;
    std::size_t dim() const { return p->dim(); }
    double loss(std::span<const double> theta) const { return p->loss(theta); }
    double loss_and_grad(std::span<const double> theta, std::span<double> grad) const
    {
        return p->loss_and_grad(theta, grad);
    }
};

}  // namespace detail

inline void TrainingProblem::hessian_vector(std::span<const double> theta, std::span<const double> v,
                                            std::span<double> out) const
{
    const auto hx = hvp(detail::GradientOnly{this}, theta, v);
    std::copy(hx.begin(), hx.end(), out.begin());
}

class QuadraticProblem final : public TrainingProblem {
public:
    explicit QuadraticProblem(QuadraticOracle q) : q_{std::move(q)} {}

    std::size_t dim() const override { return q_.dim(); }
    int classes() const override { return 0; }
    double step_loss_and_grad(std::int64_t, std::span<const double> theta, std::span<double> grad) override
    {
        return q_.loss_and_grad(theta, grad);
    }
    double loss(std::span<const double> theta) const override { return q_.loss(theta); }
    double loss_and_grad(std::span<const double> theta, std::span<double> grad) const override
    {
        return q_.loss_and_grad(theta, grad);
    }
    void hessian_vector(std::span<const double> theta, std::span<const double> v, std::span<double> out) const override
    {
        q_.hessian_vector(theta, v, out);
    }
    Metrics evaluate(std::span<const double> theta) const override { return {q_.loss(theta), kNaN, kNaN, kNaN}; }

private:
    QuadraticOracle q_;
};

/// FCN on a dataset with epoch-shuffled minibatches. `batch_size` 0 means
/// full batch.
class FcnProblem final : public TrainingProblem {
public:
    FcnProblem(NetworkSpec net, LossKind loss, std::shared_ptr<const Dataset> data, std::size_t batch_size,
               Augmentation aug, std::uint64_t sampler_seed)
        : net_{std::move(net)}, loss_{loss}, owned_{std::move(data)}, data_{*owned_}, batch_size_{batch_size},
          aug_{aug}, sampler_{sampler_seed}
    {
        if (loss_ == LossKind::XENT && data_.classes == 0)
            throw std::invalid_argument{"cross-entropy needs a classification dataset"};
        if (aug_ == Augmentation::FLIP_CROP && data_.train.inputs.rows() != static_cast<Eigen::Index>(kCifarImageBytes))
            throw std::invalid_argument{"flip_crop augmentation needs 3x32x32 inputs"};
        if (batch_size_ >= data_.train.size()) batch_size_ = 0;
    }

    const Mlp& network() const noexcept { return net_; }
    const Dataset& data() const noexcept { return data_; }
    LossKind loss_kind() const noexcept { return loss_; }

    std::size_t dim() const override { return net_.num_params(); }
    int classes() const override { return data_.classes; }

    double step_loss_and_grad(std::int64_t, std::span<const double> theta, std::span<double> grad) override
    {
        if (batch_size_ == 0 && aug_ == Augmentation::NONE) return net_.loss_and_grad(theta, data_.train, loss_, grad);
        const std::size_t n = data_.train.size();
        const std::size_t take = batch_size_ == 0 ? n : batch_size_;
        if (cursor_ + take > order_.size()) {
            order_.resize(n);
            std::iota(order_.begin(), order_.end(), std::size_t{0});
            if (batch_size_ != 0) sampler_.shuffle(order_);
            cursor_ = 0;
        }
        Batch b = data_.train.gather(std::span<const std::size_t>{order_}.subspan(cursor_, take));
        cursor_ += take;
        if (aug_ == Augmentation::FLIP_CROP) augment_flip_crop(b.inputs, sampler_);
        return net_.loss_and_grad(theta, b, loss_, grad);
    }

    double loss(std::span<const double> theta) const override { return net_.loss(theta, data_.train, loss_); }
    double loss_and_grad(std::span<const double> theta, std::span<double> grad) const override
    {
        return net_.loss_and_grad(theta, data_.train, loss_, grad);
    }
    void hessian_vector(std::span<const double> theta, std::span<const double> v, std::span<double> out) const override
    {
        net_.hessian_vector(theta, data_.train, loss_, v, out);
    }

    Metrics evaluate(std::span<const double> theta) const override
    {
        Metrics m;
        const auto train_out = net_.forward(theta, data_.train.inputs);
        m.train_loss = Mlp::loss_value(train_out, data_.train, loss_);
        if (data_.classes > 0) m.train_acc = Mlp::accuracy(train_out, data_.train.labels);
        if (data_.test.size() > 0) {
            const auto test_out = net_.forward(theta, data_.test.inputs);
            m.test_loss = Mlp::loss_value(test_out, data_.test, loss_);
            if (data_.classes > 0) m.test_acc = Mlp::accuracy(test_out, data_.test.labels);
        }
        return m;
    }

    bool has_dead_layer(std::span<const double> theta) const override
    {
        for (const auto& out : net_.layer_outputs(theta, data_.train.inputs))
            if (out.squaredNorm() == 0.0) return true;
        return false;
    }

private:
    Mlp net_;
    LossKind loss_;
    std::shared_ptr<const Dataset> owned_;
    const Dataset& data_;
    std::size_t batch_size_;
    Augmentation aug_;
    RngStream sampler_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
};

// ----------------------------------------------------------------------------
// Run configuration and results
// ----------------------------------------------------------------------------

struct RunConfig {
    OptimizerConfig optimizer;
    ScheduleSpec schedule = ScheduleSpec::constant(0.1);
    std::int64_t steps = 1000;
    int probe_every = 10;  ///< 0 disables probes
    bool probe_sharpness = true;
    bool probe_precond = false;
    int eval_every = 10;   ///< 0 evaluates only at the end
    double divergence_factor = 1e6;
    double spike_factor = 2.0;
    double failure_factor = 1.5;
    double eig_tol = kDefaultEigTol;
    int eig_max_iter = kDefaultEigMaxIter;
    std::uint64_t seed = 0;  ///< probe start vectors, RI-Adam
    std::optional<PcwConfig> pcw;
    bool record_rows = true;
};

struct RunSummary {
    RunStatus status = RunStatus::CONVERGED;
    double best_test_acc = kNaN;
    double final_train_acc = kNaN;
    double final_train_loss = kNaN;
    double initial_loss = kNaN;
    std::int64_t steps_run = 0;
    std::int64_t diverged_at = -1;
    bool dead_layer = false;  ///< informational
    std::optional<PcwPhase> pcw_phase;
    std::vector<PcwCatapult> pcw_catapults;
};

struct TrainResult {
    std::vector<TrajectoryRow> rows;
    RunSummary summary;
    FlatVector final_params;
};

namespace detail {

inline bool blown_up(double loss, double initial, double factor)
{
    return !std::isfinite(loss) || (std::isfinite(initial) && initial > 0.0 && loss > factor * initial);
}

inline void max_into(double& best, double v)
{
    if (std::isfinite(v) && (std::isnan(best) || v > best)) best = v;
}

}  // namespace detail

/// Runs `cfg.steps` updates from `theta`. Abnormal endings are reported as
/// statuses, never thrown.
inline TrainResult train_run(TrainingProblem& problem, FlatVector theta, const RunConfig& cfg)
{
    const std::size_t n = problem.dim();
    if (theta.size() != n) throw std::invalid_argument{"train_run: parameter size mismatch"};
    const FullBatchObjective full{problem};
    RngStream probe_rng{cfg.seed ^ 0x70726f6265ULL};
    RngStream opt_rng{cfg.seed ^ 0x6f7074ULL};

    FlatVector grad(n);
    const double initial_loss = problem.loss_and_grad(theta, grad);
    OptimizerState state = init_state(cfg.optimizer, n, std::span<const double>{grad}, &opt_rng);

    std::optional<PersistentCatapultWarmup> pcw;
    if (cfg.pcw) pcw.emplace(*cfg.pcw);
    auto search = [&](std::span<const double> at, const SearchConfig& sc) {
        OneStepTrial<FullBatchObjective> trial{full, at, cfg.optimizer, cfg.seed};
        return estimate_critical_lr(std::ref(trial), trial.initial_loss(), sc);
    };

    TrainResult result;
    RunSummary& sum = result.summary;
    sum.initial_loss = initial_loss;
    double min_full_loss = std::numeric_limits<double>::infinity();
    bool diverged = false;

    for (std::int64_t t = 1; t <= cfg.steps; ++t) {
        TrajectoryRow row;
        row.step = t;
        row.minibatch_loss = problem.step_loss_and_grad(t, theta, grad);

        double eta;
        if (pcw)
            eta = pcw->step(t, theta, row.minibatch_loss, search).eta;
        else
            eta = lr_at(cfg.schedule, t);
        row.lr = eta;
        if (eta > 0.0) {
            const auto thr = threshold_curves(eta, cfg.optimizer.beta, cfg.optimizer.beta1);
            row.thr_gd = thr.gd;
            row.thr_mom = thr.momentum;
            row.thr_adam = thr.adam;
        }

        const bool probe = cfg.probe_every > 0 && (t - 1) % cfg.probe_every == 0;
        const bool eval = cfg.eval_every > 0 && (t - 1) % cfg.eval_every == 0;
        if (probe || eval) {
            const Metrics m = problem.evaluate(theta);
            row.train_loss = m.train_loss;
            if (eval) {
                row.test_loss = m.test_loss;
                row.test_acc = m.test_acc;
                detail::max_into(sum.best_test_acc, m.test_acc);
            }
            if (std::isfinite(m.train_loss)) min_full_loss = std::min(min_full_loss, m.train_loss);
        }
        if (probe && std::isfinite(row.minibatch_loss)) {
            if (cfg.probe_sharpness) {
                const auto est = sharpness(full, theta, probe_rng, cfg.eig_tol, cfg.eig_max_iter);
                if (est.converged) row.sharpness = est.value;
            }
            if (cfg.probe_precond && is_adam_family(cfg.optimizer.kind) && state.t >= 1) {
                const auto est =
                    preconditioned_sharpness(full, theta, state, cfg.optimizer, probe_rng, cfg.eig_tol, cfg.eig_max_iter);
                if (est.converged) row.precond_sharpness = est.value;
            }
        }

        if (detail::blown_up(row.minibatch_loss, initial_loss, cfg.divergence_factor) ||
            (!std::isnan(row.train_loss) && detail::blown_up(row.train_loss, initial_loss, cfg.divergence_factor))) {
            row.event = Event::DIVERGED;
            diverged = true;
        } else if (row.minibatch_loss > cfg.spike_factor * min_full_loss) {
            row.event = Event::LOSS_SPIKE;
        }
        if (cfg.record_rows) result.rows.push_back(row);
        sum.steps_run = t;
        if (diverged) {
            sum.diverged_at = t;
            break;
        }
        apply_step(cfg.optimizer, state, theta, grad, eta);
    }

    if (!diverged) {
        const Metrics m = problem.evaluate(theta);
        sum.final_train_loss = m.train_loss;
        sum.final_train_acc = m.train_acc;
        detail::max_into(sum.best_test_acc, m.test_acc);
        if (detail::blown_up(m.train_loss, initial_loss, cfg.divergence_factor) || !all_finite(theta)) {
            diverged = true;
            sum.diverged_at = sum.steps_run;
            if (cfg.record_rows && !result.rows.empty()) result.rows.back().event = Event::DIVERGED;
        }
    }
    if (diverged) {
        sum.status = RunStatus::DIVERGED;
    } else if (problem.classes() > 0 &&
               !(sum.final_train_acc >= cfg.failure_factor / static_cast<double>(problem.classes()))) {
        sum.status = RunStatus::FAILED;
        if (cfg.record_rows && !result.rows.empty()) result.rows.back().event = Event::FAILED;
    } else {
        sum.status = RunStatus::CONVERGED;
    }
    if (!diverged) sum.dead_layer = problem.has_dead_layer(theta);
    if (pcw) {
        sum.pcw_phase = pcw->phase();
        sum.pcw_catapults = pcw->catapults();
    }
    result.final_params = std::move(theta);
    return result;
}

// ----------------------------------------------------------------------------
// Composed configuration
// ----------------------------------------------------------------------------

/// Everything needed to build an FCN run from scratch.
struct TrainConfig {
    NetworkSpec network;
    LossKind loss = LossKind::MSE;
    DatasetSpec data;
    std::size_t batch_size = 0;  ///< 0 = full batch
    RunConfig run;
    std::uint64_t seed = 0;      ///< initialization and minibatch order
};

/// Network input/output sizes follow the dataset.
inline NetworkSpec network_for(const TrainConfig& cfg, const Dataset& data)
{
    NetworkSpec net = cfg.network;
    net.in_dim = static_cast<int>(data.train.inputs.rows());
    net.out_dim = static_cast<int>(data.train.targets.rows());
    return net;
}

inline OptimizerConfig optimizer_for(const TrainConfig& cfg, const NetworkSpec& net)
{
    OptimizerConfig opt = cfg.run.optimizer;
    if (is_adam_family(opt.kind) && net.parameterization == Parameterization::MUP)
        opt.lr_multipliers = ParamLayout::for_network(net).lr_multipliers();
    else
        opt.lr_multipliers.clear();
    return opt;
}

struct PreparedRun {
    std::unique_ptr<FcnProblem> problem;
    FlatVector theta0;
    RunConfig run;
};

inline PreparedRun prepare_run(const TrainConfig& cfg, std::shared_ptr<const Dataset> data)
{
    const NetworkSpec net = network_for(cfg, *data);
    RngStream init_rng{cfg.seed};
    PreparedRun p;
    p.theta0 = init_params(net, init_rng).values;
    p.problem = std::make_unique<FcnProblem>(net, cfg.loss, std::move(data), cfg.batch_size, cfg.data.augmentation,
                                             cfg.seed ^ 0x62617463ULL);
    p.run = cfg.run;
    p.run.optimizer = optimizer_for(cfg, net);
    return p;
}

inline TrainResult train_run(const TrainConfig& cfg)
{
    auto p = prepare_run(cfg, std::make_shared<const Dataset>(load_dataset(cfg.data)));
    return train_run(*p.problem, std::move(p.theta0), p.run);
}

}  // namespace warmup
