#include "warmup/harness/csv.hpp"
#include "warmup/harness/training.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace warmup;

namespace {

QuadraticProblem quad41() { return QuadraticProblem{QuadraticOracle{SymMatrix::diagonal(FlatVector{4, 1})}}; }

RunConfig gd_run(ScheduleSpec schedule, std::int64_t steps)
{
    RunConfig c;
    c.optimizer.kind = OptimizerKind::SGD;
    c.schedule = schedule;
    c.steps = steps;
    return c;
}

/// A classification problem whose accuracy is fixed.
class FixedAccuracy final : public TrainingProblem {
public:
    explicit FixedAccuracy(double acc) : acc_{acc} {}
    std::size_t dim() const override { return 1; }
    int classes() const override { return 10; }
    double step_loss_and_grad(std::int64_t, std::span<const double> theta, std::span<double> g) override
    {
        return loss_and_grad(theta, g);
    }
    double loss(std::span<const double> theta) const override { return 1.0 + theta[0] * theta[0]; }
    double loss_and_grad(std::span<const double> theta, std::span<double> g) const override
    {
        g[0] = 2 * theta[0];
        return loss(theta);
    }
    Metrics evaluate(std::span<const double> theta) const override { return {loss(theta), acc_, loss(theta), acc_}; }

private:
    double acc_;
};

TrainConfig small_fcn()
{
    TrainConfig c;
    c.network.depth = 3;
    c.network.width = 16;
    c.data.n_train = 64;
    c.data.n_test = 32;
    c.data.in_dim = 8;
    c.data.classes = 4;
    c.run.optimizer.kind = OptimizerKind::SGD;
    c.run.schedule = ScheduleSpec::linear_warmup(0.0, 0.05, 8);
    c.run.steps = 30;
    c.run.probe_every = 5;
    c.run.eval_every = 5;
    c.batch_size = 16;
    c.seed = 3;
    return c;
}

}  // namespace

TEST(TrainRun, QuadraticAboveTwoOverLambdaDiverges)
{
    auto p = quad41();
    const auto r = train_run(p, FlatVector{1, 1}, gd_run(ScheduleSpec::constant(0.51), 2000));
    EXPECT_EQ(r.summary.status, RunStatus::DIVERGED);
    EXPECT_EQ(r.rows.back().event, Event::DIVERGED);
    EXPECT_EQ(r.summary.diverged_at, r.rows.back().step);
}

TEST(TrainRun, QuadraticBelowTwoOverLambdaConverges)
{
    auto p = quad41();
    const auto r = train_run(p, FlatVector{1, 1}, gd_run(ScheduleSpec::constant(0.49), 2000));
    EXPECT_EQ(r.summary.status, RunStatus::CONVERGED);
    EXPECT_LT(r.summary.final_train_loss, 1e-10);
    for (const auto& row : r.rows) EXPECT_NE(row.event, Event::LOSS_SPIKE);
}

TEST(TrainRun, ZeroLearningRateDoesNotMove)
{
    auto p = quad41();
    const auto r = train_run(p, FlatVector{1, 1}, gd_run(ScheduleSpec::constant(0.0), 50));
    EXPECT_EQ(r.summary.status, RunStatus::CONVERGED);
    EXPECT_EQ(r.final_params, (FlatVector{1, 1}));
    for (const auto& row : r.rows) {
        EXPECT_EQ(row.minibatch_loss, 2.5);
        EXPECT_TRUE(std::isnan(row.thr_gd));
    }
}

TEST(TrainRun, LowAccuracyIsFailure)
{
    FixedAccuracy p{0.12};
    const auto r = train_run(p, FlatVector{1.0}, gd_run(ScheduleSpec::constant(0.1), 20));
    EXPECT_EQ(r.summary.status, RunStatus::FAILED);
    EXPECT_EQ(r.rows.back().event, Event::FAILED);
    FixedAccuracy ok{0.16};
    EXPECT_EQ(train_run(ok, FlatVector{1.0}, gd_run(ScheduleSpec::constant(0.1), 20)).summary.status,
              RunStatus::CONVERGED);
}

TEST(TrainRun, ScheduleFidelityAndThresholds)
{
    auto p = quad41();
    const auto sched = ScheduleSpec::warmup_then_cosine(0.0, 0.3, 16, 40);
    const auto r = train_run(p, FlatVector{1, 1}, gd_run(sched, 60));
    ASSERT_EQ(r.rows.size(), 60u);
    for (std::size_t i = 0; i < r.rows.size(); ++i) {
        const auto& row = r.rows[i];
        EXPECT_EQ(row.step, static_cast<std::int64_t>(i) + 1);
        EXPECT_EQ(row.lr, lr_at(sched, row.step));
        EXPECT_EQ(row.thr_gd, threshold_curves(row.lr).gd);
        EXPECT_EQ(row.thr_mom, threshold_curves(row.lr).momentum);
        EXPECT_EQ(row.thr_adam, threshold_curves(row.lr).adam);
    }
}

TEST(TrainRun, ProbesAtCadence)
{
    auto p = quad41();
    auto cfg = gd_run(ScheduleSpec::constant(0.1), 25);
    cfg.probe_every = 10;
    const auto r = train_run(p, FlatVector{1, 1}, cfg);
    for (const auto& row : r.rows) {
        if ((row.step - 1) % 10 == 0) {
            EXPECT_NEAR(row.sharpness, 4.0, 1e-6);
            EXPECT_FALSE(std::isnan(row.train_loss));
        } else {
            EXPECT_TRUE(std::isnan(row.sharpness));
        }
        EXPECT_TRUE(std::isnan(row.precond_sharpness));
    }
}

TEST(TrainRun, SpikesFlaggedBeforeDivergence)
{
    auto p = quad41();
    auto cfg = gd_run(ScheduleSpec::constant(0.52), 2000);
    cfg.probe_every = 0;
    cfg.eval_every = 1;
    const auto r = train_run(p, FlatVector{1, 1}, cfg);
    int spikes = 0;
    for (std::size_t i = 0; i + 1 < r.rows.size(); ++i) spikes += r.rows[i].event == Event::LOSS_SPIKE;
    EXPECT_GT(spikes, 0);
    EXPECT_EQ(r.summary.status, RunStatus::DIVERGED);
}

TEST(TrainRun, DivergenceBoundaryMatchesTwoOverLambda)
{
    // first diverging step size on a 1e-3 grid around 2 / lambda = 0.5
    double first = NAN;
    for (int k = 490; k <= 510; ++k) {
        auto p = quad41();
        auto cfg = gd_run(ScheduleSpec::constant(k * 1e-3), 6000);
        cfg.probe_every = 0;
        cfg.eval_every = 0;
        cfg.record_rows = false;
        if (train_run(p, FlatVector{1, 1}, cfg).summary.status == RunStatus::DIVERGED) {
            first = k * 1e-3;
            break;
        }
    }
    EXPECT_NEAR(first, 0.5, 1e-3 + 1e-12);
}

TEST(TrainRun, NonFiniteLossIsDivergenceNotCrash)
{
    auto p = quad41();
    const auto r = train_run(p, FlatVector{1e200, 1}, gd_run(ScheduleSpec::constant(0.1), 10));
    EXPECT_EQ(r.summary.status, RunStatus::DIVERGED);
    EXPECT_EQ(r.summary.steps_run, 1);
}

TEST(TrainRun, RejectsWrongParameterSize)
{
    auto p = quad41();
    EXPECT_THROW(train_run(p, FlatVector{1}, gd_run(ScheduleSpec::constant(0.1), 1)), std::invalid_argument);
}

TEST(TrainRun, ReproducibleTrajectoryBytes)
{
    const auto cfg = small_fcn();
    const auto a = trajectory_csv(train_run(cfg).rows);
    const auto b = trajectory_csv(train_run(cfg).rows);
    EXPECT_EQ(a, b);
    auto other = cfg;
    other.seed = 4;
    EXPECT_NE(trajectory_csv(train_run(other).rows), a);
}

TEST(TrainRun, AdamLogsPreconditionedSharpness)
{
    auto cfg = small_fcn();
    cfg.run.optimizer.kind = OptimizerKind::ADAM;
    cfg.run.schedule = ScheduleSpec::constant(1e-3);
    cfg.run.probe_precond = true;
    const auto r = train_run(cfg);
    EXPECT_TRUE(std::isnan(r.rows[0].precond_sharpness));  // no second moment before the first update
    EXPECT_FALSE(std::isnan(r.rows[5].precond_sharpness));
    EXPECT_GT(r.rows[5].precond_sharpness, 0.0);
}

TEST(TrainRun, ExactlyOneTerminalStatus)
{
    for (double eta : {0.0, 0.05, 5.0, 1e6}) {
        auto cfg = small_fcn();
        cfg.run.schedule = ScheduleSpec::constant(eta);
        const auto r = train_run(cfg);
        int terminal = 0;
        for (const auto& row : r.rows) terminal += row.event == Event::DIVERGED || row.event == Event::FAILED;
        EXPECT_LE(terminal, 1);
        if (r.summary.status == RunStatus::DIVERGED) {
            EXPECT_EQ(r.rows.back().event, Event::DIVERGED);
        }
        if (r.summary.status == RunStatus::FAILED) {
            EXPECT_EQ(r.rows.back().event, Event::FAILED);
        }
    }
}

TEST(TrainRun, BestTestAccuracyIsMaxOfEvaluations)
{
    const auto r = train_run(small_fcn());
    double best = 0.0;
    for (const auto& row : r.rows)
        if (!std::isnan(row.test_acc)) best = std::max(best, row.test_acc);
    EXPECT_GE(r.summary.best_test_acc, best);
}

TEST(TrainRun, PcwRaisesLearningRate)
{
    auto cfg = small_fcn();
    cfg.batch_size = 0;
    cfg.run.steps = 200;
    cfg.run.probe_every = 0;
    PcwConfig pc;
    pc.eta_trgt = 0.5;
    cfg.run.pcw = pc;
    const auto r = train_run(cfg);
    ASSERT_TRUE(r.summary.pcw_phase.has_value());
    ASSERT_FALSE(r.summary.pcw_catapults.empty());
    double prev = 0.0;
    for (const auto& row : r.rows) {
        EXPECT_GE(row.lr, prev);
        EXPECT_LE(row.lr, 0.5);
        prev = row.lr;
    }
    EXPECT_GT(prev, 0.0);
}

TEST(TrainConfig, MupAdamGetsLayerMultipliers)
{
    auto cfg = small_fcn();
    cfg.network.parameterization = Parameterization::MUP;
    cfg.run.optimizer.kind = OptimizerKind::ADAM;
    const auto data = std::make_shared<const Dataset>(load_dataset(cfg.data));
    const auto p = prepare_run(cfg, data);
    ASSERT_EQ(p.run.optimizer.lr_multipliers.size(), p.theta0.size());
    EXPECT_EQ(p.run.optimizer.lr_multipliers.front(), 0.25);       // 1 / sqrt(16)
    EXPECT_EQ(p.run.optimizer.lr_multipliers.back(), 1.0 / 16.0);  // last layer
    cfg.run.optimizer.kind = OptimizerKind::SGD;
    EXPECT_TRUE(prepare_run(cfg, data).run.optimizer.lr_multipliers.empty());
}

TEST(TrainConfig, CrossEntropyNeedsClasses)
{
    auto cfg = small_fcn();
    cfg.data.kind = DatasetKind::SYNTH_REG;
    cfg.loss = LossKind::XENT;
    EXPECT_THROW(train_run(cfg), std::invalid_argument);
}

TEST(FcnProblem, DeadLayerDiagnostic)
{
    auto cfg = small_fcn();
    const auto data = std::make_shared<const Dataset>(load_dataset(cfg.data));
    auto p = prepare_run(cfg, data);
    EXPECT_FALSE(p.problem->has_dead_layer(p.theta0));
    FlatVector zeros(p.theta0.size(), 0.0);
    EXPECT_TRUE(p.problem->has_dead_layer(zeros));
}

TEST(FcnProblem, MinibatchesCoverEpoch)
{
    auto cfg = small_fcn();
    const auto data = std::make_shared<const Dataset>(load_dataset(cfg.data));
    auto p = prepare_run(cfg, data);
    FlatVector g(p.theta0.size()), sum(p.theta0.size(), 0.0);
    double loss = 0.0;
    for (int k = 0; k < 4; ++k) {
        loss += p.problem->step_loss_and_grad(k + 1, p.theta0, g) / 4;
        axpy(0.25, g, sum);
    }
    FlatVector full(p.theta0.size());
    // four batches of 16 partition the 64 samples
    EXPECT_NEAR(loss, p.problem->loss_and_grad(p.theta0, full), 1e-12);
    for (std::size_t i = 0; i < full.size(); ++i) EXPECT_NEAR(sum[i], full[i], 1e-12);
}

TEST(Names, StatusAndEventRoundTrip)
{
    for (auto s : {RunStatus::CONVERGED, RunStatus::DIVERGED, RunStatus::FAILED})
        EXPECT_EQ(status_from_string(to_string(s)), s);
    EXPECT_EQ(to_string(Event::LOSS_SPIKE), "LOSS_SPIKE");
    EXPECT_EQ(to_string(Event::NONE), "none");
}
