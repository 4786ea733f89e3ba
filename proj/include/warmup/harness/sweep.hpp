#pragma once

/// \file sweep.hpp
///
/// Warmup phase diagrams: a grid of warmup durations x target learning rates
/// per seed. Target learning rates are sampled column by column, either as
/// 2^x / lambda_0 (lambda_0 = sharpness at initialization) until a column
/// diverges entirely, or as base * 2^(x * step) until a column contains no
/// converged run.

#include "csv.hpp"
#include "dataset.hpp"
#include "training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

namespace warmup {

enum class LrGrid { SHARPNESS_ANCHORED, GEOMETRIC };

inline std::string_view to_string(LrGrid g) { return g == LrGrid::SHARPNESS_ANCHORED ? "sharpness" : "geometric"; }

inline LrGrid grid_from_string(std::string_view s)
{
    if (s == "sharpness") return LrGrid::SHARPNESS_ANCHORED;
    if (s == "geometric") return LrGrid::GEOMETRIC;
    throw std::invalid_argument{"unknown lr grid: " + std::string{s}};
}

/// {1, 2, 4, ..., 2^k}
inline std::vector<std::int64_t> power_of_two_durations(int k)
{
    std::vector<std::int64_t> out;
    for (int i = 0; i <= k; ++i) out.push_back(std::int64_t{1} << i);
    return out;
}

struct SweepSpec {
    TrainConfig base;
    std::vector<std::int64_t> warmup_steps = power_of_two_durations(8);
    LrGrid grid = LrGrid::SHARPNESS_ANCHORED;
    double geometric_base = 1e-5;
    double x_step = 1.0;
    int max_columns = 16;
    std::vector<std::uint64_t> seeds = {0};
    int workers = 1;
};

struct SweepResult {
    std::vector<PhaseCell> cells;
    std::map<std::uint64_t, double> initial_sharpness;  ///< per seed, sharpness-anchored grids only
};

/// Target learning rate of column x.
inline double grid_lr(const SweepSpec& spec, int x, double lambda0)
{
    if (spec.grid == LrGrid::SHARPNESS_ANCHORED) return std::ldexp(1.0, x) / lambda0;
    return spec.geometric_base * std::exp2(spec.x_step * x);
}

/// Schedule of one cell: linear warmup from zero, followed by cosine decay
/// when the base schedule asks for it.
inline ScheduleSpec cell_schedule(const SweepSpec& spec, std::int64_t warmup, double eta_trgt)
{
    const auto& base = spec.base.run.schedule;
    if (base.kind == ScheduleKind::WARMUP_THEN_COSINE) {
        const std::int64_t decay = std::max<std::int64_t>(1, spec.base.run.steps - warmup);
        return ScheduleSpec::warmup_then_cosine(0.0, eta_trgt, warmup, decay, eta_trgt / 10.0, base.rho);
    }
    return ScheduleSpec::linear_warmup(0.0, eta_trgt, warmup);
}

/// Sharpness at initialization for the given seed.
inline double initial_sharpness(const TrainConfig& cfg, std::shared_ptr<const Dataset> data)
{
    auto p = prepare_run(cfg, std::move(data));
    RngStream rng{cfg.seed ^ 0x6c616d626461ULL};
    const auto est = sharpness(FullBatchObjective{*p.problem}, p.theta0, rng, cfg.run.eig_tol, cfg.run.eig_max_iter);
    if (!(est.value > 0.0)) throw std::runtime_error{"initial sharpness is not positive"};
    return est.value;
}

inline PhaseCell run_cell(const SweepSpec& spec, std::shared_ptr<const Dataset> data, std::uint64_t seed,
                          std::int64_t warmup, double eta_trgt)
{
    TrainConfig cfg = spec.base;
    cfg.seed = seed;
    cfg.run.seed = seed;
    cfg.run.schedule = cell_schedule(spec, warmup, eta_trgt);
    cfg.run.record_rows = false;
    cfg.run.probe_every = 0;
    auto p = prepare_run(cfg, std::move(data));
    const auto res = train_run(*p.problem, std::move(p.theta0), p.run);
    PhaseCell c;
    c.warmup_steps = warmup;
    c.target_lr = eta_trgt;
    c.best_test_acc = res.summary.best_test_acc;
    c.final_train_acc = res.summary.final_train_acc;
    c.status = res.summary.status;
    c.steps_run = res.summary.steps_run;
    c.seed = seed;
    return c;
}

/// Runs the grid. Cells already present in `existing` (same warmup, target
/// and seed) are kept and not re-run. `on_cell` sees each newly finished
/// cell, one at a time.
inline SweepResult sweep(const SweepSpec& spec, std::vector<PhaseCell> existing = {},
                         const std::function<void(const PhaseCell&)>& on_cell = {})
{
    if (spec.warmup_steps.empty() || spec.seeds.empty()) throw std::invalid_argument{"sweep: empty grid"};
    using Key = std::tuple<std::int64_t, double, std::uint64_t>;
    std::map<Key, PhaseCell> done;
    for (const auto& c : existing) done.emplace(Key{c.warmup_steps, c.target_lr, c.seed}, c);

    const auto data = std::make_shared<const Dataset>(load_dataset(spec.base.data));
    SweepResult result;
    std::mutex mu;

    for (const auto seed : spec.seeds) {
        double lambda0 = 0.0;
        if (spec.grid == LrGrid::SHARPNESS_ANCHORED) {
            TrainConfig cfg = spec.base;
            cfg.seed = seed;
            lambda0 = initial_sharpness(cfg, data);
            result.initial_sharpness[seed] = lambda0;
        }
        for (int x = 0; x < spec.max_columns; ++x) {
            const double eta = grid_lr(spec, x, lambda0);
            std::vector<PhaseCell> column(spec.warmup_steps.size());
            std::vector<std::size_t> todo;
            for (std::size_t i = 0; i < spec.warmup_steps.size(); ++i) {
                const auto it = done.find(Key{spec.warmup_steps[i], eta, seed});
                if (it != done.end())
                    column[i] = it->second;
                else
                    todo.push_back(i);
            }
            std::size_t next = 0;
            auto worker = [&] {
                while (true) {
                    std::size_t i;
                    {
                        std::lock_guard lock{mu};
                        if (next == todo.size()) return;
                        i = todo[next++];
                    }
                    PhaseCell c = run_cell(spec, data, seed, spec.warmup_steps[i], eta);
                    std::lock_guard lock{mu};
                    column[i] = c;
                    if (on_cell) on_cell(c);
                }
            };
            const int n_workers = std::max(1, std::min<int>(spec.workers, static_cast<int>(todo.size())));
            if (n_workers == 1) {
                worker();
            } else {
                std::vector<std::thread> pool;
                for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
                for (auto& th : pool) th.join();
            }
            result.cells.insert(result.cells.end(), column.begin(), column.end());
            const bool boundary = std::all_of(column.begin(), column.end(), [&](const PhaseCell& c) {
                return spec.grid == LrGrid::SHARPNESS_ANCHORED ? c.status == RunStatus::DIVERGED
                                                                : c.status != RunStatus::CONVERGED;
            });
            if (boundary) break;
        }
    }
    return result;
}

/// Largest target learning rate that did not diverge, per (seed, warmup).
inline double max_stable_lr(const std::vector<PhaseCell>& cells, std::uint64_t seed, std::int64_t warmup)
{
    double best = 0.0;
    for (const auto& c : cells)
        if (c.seed == seed && c.warmup_steps == warmup && c.status != RunStatus::DIVERGED)
            best = std::max(best, c.target_lr);
    return best;
}

/// Smallest target learning rate whose run ended with `status`, per (seed,
/// warmup); +inf when none did.
inline double min_lr_with_status(const std::vector<PhaseCell>& cells, std::uint64_t seed, std::int64_t warmup,
                                 RunStatus status)
{
    double best = std::numeric_limits<double>::infinity();
    for (const auto& c : cells)
        if (c.seed == seed && c.warmup_steps == warmup && c.status == status) best = std::min(best, c.target_lr);
    return best;
}

}  // namespace warmup
