// warmlab: command-line driver for training runs, warmup sweeps, critical
// learning-rate estimates, persistent catapult warmup and test data.

#include "warmup/warmup.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

using namespace warmup;
namespace fs = std::filesystem;

namespace {

/// Flags shared by every run-type subcommand. Anything set here overrides the
/// JSON config.
struct RunFlags {
    std::string config;
    std::string save_config;
    std::optional<std::uint64_t> seed;
    std::optional<std::int64_t> steps;
    std::optional<std::string> optimizer;
    std::optional<std::string> loss;
    std::optional<std::string> parameterization;
    std::optional<int> depth;
    std::optional<int> width;
    std::optional<std::string> data_kind;
    std::optional<std::string> data_path;
    std::optional<std::size_t> n_train;
    std::optional<std::size_t> batch_size;
    std::optional<std::string> schedule;
    std::optional<double> lr;
    std::optional<double> lr_init;
    std::optional<std::int64_t> warmup;
    std::optional<int> probe_every;

    void attach(CLI::App* app)
    {
        app->add_option("-c,--config", config, "JSON run configuration")->check(CLI::ExistingFile);
        app->add_option("--save-config", save_config, "write the effective configuration here");
        app->add_option("--seed", seed, "initialization / minibatch seed");
        app->add_option("--steps", steps, "training steps");
        app->add_option("--optimizer", optimizer, "sgd | sgdm | adam | gi-adam | ri-adam");
        app->add_option("--loss", loss, "mse | xent");
        app->add_option("--param", parameterization, "sp | mup | simple-mup");
        app->add_option("--depth", depth, "number of weight layers");
        app->add_option("--width", width, "hidden width");
        app->add_option("--data", data_kind, "synth-class | synth-reg | cifar10-bin");
        app->add_option("--data-path", data_path, "directory with CIFAR-10 .bin batches");
        app->add_option("--n-train", n_train, "training samples");
        app->add_option("--batch-size", batch_size, "minibatch size, 0 = full batch");
        app->add_option("--schedule", schedule, "const | linear-warmup | cosine | warmup-cosine | gi-implicit");
        app->add_option("--lr", lr, "target learning rate");
        app->add_option("--lr-init", lr_init, "initial learning rate of the warmup");
        app->add_option("--warmup", warmup, "warmup steps");
        app->add_option("--probe-every", probe_every, "sharpness probe interval, 0 disables");
    }

    void apply(TrainConfig& c) const
    {
        if (seed) c.seed = c.run.seed = *seed;
        if (steps) c.run.steps = *steps;
        if (optimizer) c.run.optimizer.kind = optimizer_from_string(*optimizer);
        if (loss) c.loss = loss_from_string(*loss);
        if (parameterization) c.network.parameterization = parameterization_from_string(*parameterization);
        if (depth) c.network.depth = *depth;
        if (width) c.network.width = *width;
        if (data_kind) c.data.kind = dataset_from_string(*data_kind);
        if (data_path) c.data.path = *data_path;
        if (n_train) c.data.n_train = *n_train;
        if (batch_size) c.batch_size = *batch_size;
        auto& s = c.run.schedule;
        if (schedule) s.kind = schedule_from_string(*schedule);
        if (lr) s.eta_trgt = *lr;
        if (lr_init) s.eta_init = *lr_init;
        if (warmup) s.warmup_steps = *warmup;
        // a decay set up from the command line spans the rest of the run
        if ((schedule || steps || warmup) &&
            (s.kind == ScheduleKind::COSINE || s.kind == ScheduleKind::WARMUP_THEN_COSINE)) {
            const std::int64_t decay = s.kind == ScheduleKind::COSINE ? c.run.steps : c.run.steps - s.warmup_steps;
            s.cosine_steps = std::max<std::int64_t>(1, decay);
        }
        s.validate();
        if (probe_every) c.run.probe_every = *probe_every;
        c.network.validate();
        c.run.optimizer.validate();
    }

    json load() const { return config.empty() ? json::object() : load_json_file(config); }

    void save(const json& j) const
    {
        if (save_config.empty()) return;
        std::ofstream out{save_config};
        if (!out) throw std::runtime_error{"cannot write " + save_config};
        out << j.dump(2) << '\n';
    }
};

/// Writes to a file, or to stdout for "-".
class Output {
public:
    explicit Output(const std::string& path)
    {
        if (path == "-") return;
        file_.open(path);
        if (!file_) throw std::runtime_error{"cannot write " + path};
    }
    std::ostream& stream() { return file_.is_open() ? file_ : std::cout; }

private:
    std::ofstream file_;
};

void print_summary(const RunSummary& s)
{
    std::cerr << "status " << to_string(s.status) << ", steps " << s.steps_run << ", final train loss "
              << format_real(s.final_train_loss) << ", final train acc " << format_real(s.final_train_acc)
              << ", best test acc " << format_real(s.best_test_acc) << '\n';
    if (s.dead_layer) std::cerr << "warning: a layer is dead on the whole train set\n";
}

// ---------------------------------------------------------------------------

int cmd_train(const RunFlags& f, const std::string& out_path)
{
    TrainConfig cfg;
    apply_json(cfg, f.load());
    f.apply(cfg);
    f.save(to_json(cfg));
    const auto res = train_run(cfg);
    Output out{out_path};
    write_trajectory_csv(out.stream(), res.rows);
    print_summary(res.summary);
    return 0;
}

struct SweepFlags {
    std::vector<std::int64_t> warmups;
    std::optional<std::string> grid;
    std::optional<double> base_lr;
    std::optional<double> x_step;
    std::optional<int> columns;
    std::vector<std::uint64_t> seeds;
    std::optional<int> workers;
    bool resume = false;
};

int cmd_sweep(const RunFlags& f, const SweepFlags& sf, const std::string& out_path)
{
    SweepSpec spec;
    apply_json(spec, f.load());
    f.apply(spec.base);
    if (!sf.warmups.empty()) spec.warmup_steps = sf.warmups;
    if (sf.grid) spec.grid = grid_from_string(*sf.grid);
    if (sf.base_lr) spec.geometric_base = *sf.base_lr;
    if (sf.x_step) spec.x_step = *sf.x_step;
    if (sf.columns) spec.max_columns = *sf.columns;
    if (!sf.seeds.empty()) spec.seeds = sf.seeds;
    if (sf.workers) spec.workers = *sf.workers;
    f.save(to_json(spec));

    std::vector<PhaseCell> existing;
    if (sf.resume && out_path != "-" && fs::exists(out_path)) {
        std::ifstream in{out_path};
        existing = read_phase_csv(in);
        std::cerr << "resuming with " << existing.size() << " finished cells\n";
    }
    Output out{out_path};
    write_phase_header(out.stream());
    for (const auto& c : existing) write_phase_row(out.stream(), c);
    out.stream().flush();
    const auto result = sweep(spec, existing, [&](const PhaseCell& c) {
        write_phase_row(out.stream(), c);
        out.stream().flush();
    });
    for (const auto& [seed, lambda0] : result.initial_sharpness)
        std::cerr << "seed " << seed << ": initial sharpness " << format_real(lambda0) << '\n';
    for (const auto seed : spec.seeds)
        for (const auto w : spec.warmup_steps)
            std::cerr << "seed " << seed << ", warmup " << w << ": max stable lr "
                      << format_real(max_stable_lr(result.cells, seed, w)) << '\n';
    return 0;
}

struct LrcFlags {
    double eta0 = 1e-4;
    std::optional<double> delta;
    std::optional<double> eta_trgt;
    std::int64_t warmup = 0;
};

int cmd_lrc(const RunFlags& f, const LrcFlags& lf)
{
    TrainConfig cfg;
    apply_json(cfg, f.load());
    f.apply(cfg);
    f.save(to_json(cfg));
    auto p = prepare_run(cfg, std::make_shared<const Dataset>(load_dataset(cfg.data)));
    const FullBatchObjective full{*p.problem};
    OneStepTrial<FullBatchObjective> trial{full, p.theta0, p.run.optimizer, cfg.seed};
    SearchConfig sc;
    sc.eta0 = lf.eta0;
    sc.delta = lf.delta.value_or(SearchConfig::default_delta(p.run.optimizer.kind));
    sc.validate();

    CriticalLrEstimate est;
    std::optional<EtaInitSelection> sel;
    if (lf.eta_trgt) {
        sel = select_eta_init(std::ref(trial), trial.initial_loss(), sc, *lf.eta_trgt,
                              lf.warmup > 0 ? lf.warmup : cfg.run.schedule.warmup_steps);
        est = sel->estimate;
    } else {
        est = estimate_critical_lr(std::ref(trial), trial.initial_loss(), sc);
    }
    std::cout << "initial loss   " << format_real(trial.initial_loss()) << '\n'
              << "bracket        [" << format_real(est.lower) << ", " << format_real(est.upper) << "]\n"
              << "eta_c          " << format_real(est.eta_c) << '\n'
              << "forward passes " << est.forward_passes << '\n';
    if (est.capped) std::cout << "note: no loss increase up to the cap\n";
    if (est.degenerate) std::cout << "note: the loss already increased at eta0\n";
    if (est.exhausted) std::cout << "note: no loss increase found\n";
    if (sel) {
        std::cout << "eta_init       " << format_real(sel->eta_init) << (sel->fell_back ? " (fallback)" : "") << '\n'
                  << "reach step     " << sel->reach_step << '\n'
                  << "steps saved    " << format_real(sel->steps_saved) << '\n';
    }
    std::cout << "\neta_lower,eta_upper,eta_c,forward_passes,capped,degenerate,exhausted,eta_trgt,eta_init,"
                 "reach_step,steps_saved\n"
              << format_real(est.lower) << ',' << format_real(est.upper) << ',' << format_real(est.eta_c) << ','
              << est.forward_passes << ',' << est.capped << ',' << est.degenerate << ',' << est.exhausted << ','
              << (sel ? format_real(*lf.eta_trgt) : "") << ',' << (sel ? format_real(sel->eta_init) : "") << ','
              << (sel ? std::to_string(sel->reach_step) : "") << ',' << (sel ? format_real(sel->steps_saved) : "")
              << '\n';
    return 0;
}

struct PcwFlags {
    std::optional<double> eta_trgt;
    std::optional<double> delta;
    std::optional<std::int64_t> max_wait;
    std::string catapults;
};

int cmd_pcw(const RunFlags& f, const PcwFlags& pf, const std::string& out_path)
{
    TrainConfig cfg;
    apply_json(cfg, f.load());
    f.apply(cfg);
    PcwConfig pc = cfg.run.pcw.value_or(PcwConfig{});
    if (pf.eta_trgt) pc.eta_trgt = *pf.eta_trgt;
    if (pf.delta) pc.delta = *pf.delta;
    if (pf.max_wait) pc.max_wait = *pf.max_wait;
    if (!(pc.eta_trgt > 0.0)) throw std::invalid_argument{"pcw: a positive --eta-trgt is required"};
    cfg.run.pcw = pc;
    f.save(to_json(cfg));
    const auto res = train_run(cfg);
    Output out{out_path};
    write_trajectory_csv(out.stream(), res.rows);
    if (!pf.catapults.empty()) {
        Output log{pf.catapults};
        log.stream() << "step,eta_before,eta_after,reference_loss,forward_passes,returned_step\n";
        for (const auto& k : res.summary.pcw_catapults)
            log.stream() << k.step << ',' << format_real(k.eta_before) << ',' << format_real(k.eta_after) << ','
                         << format_real(k.reference_loss) << ',' << k.forward_passes << ',' << k.returned_step
                         << '\n';
    }
    std::cerr << "pcw phase " << to_string(res.summary.pcw_phase.value_or(PcwPhase::SEARCHING)) << ", "
              << res.summary.pcw_catapults.size() << " catapults\n";
    print_summary(res.summary);
    return res.summary.pcw_phase == PcwPhase::STALLED ? 3 : 0;
}

int cmd_gen_data(const std::string& dir, std::size_t n_train, std::size_t n_test, std::uint64_t seed, double noise)
{
    fs::create_directories(dir);
    write_cifar_file(fs::path{dir} / "data_batch_1.bin", synth_cifar_records(n_train, seed, noise));
    write_cifar_file(fs::path{dir} / "test_batch.bin", synth_cifar_records(n_test, seed + 1, noise));
    std::cerr << "wrote " << n_train << " train and " << n_test << " test records to " << dir << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Learning-rate warmup lab"};
    app.require_subcommand(1);

    std::string out = "-";

    RunFlags train_flags;
    auto* train = app.add_subcommand("train", "run one training job and write its trajectory CSV");
    train_flags.attach(train);
    train->add_option("-o,--out", out, "trajectory CSV, - for stdout");

    RunFlags sweep_flags;
    SweepFlags sf;
    auto* sw = app.add_subcommand("sweep", "warmup x learning-rate phase diagram");
    sweep_flags.attach(sw);
    sw->add_option("-o,--out", out, "phase CSV, - for stdout");
    sw->add_option("--warmups", sf.warmups, "warmup durations")->delimiter(',');
    sw->add_option("--grid", sf.grid, "sharpness | geometric");
    sw->add_option("--base-lr", sf.base_lr, "geometric grid base");
    sw->add_option("--x-step", sf.x_step, "geometric grid exponent step");
    sw->add_option("--columns", sf.columns, "maximum learning-rate columns");
    sw->add_option("--seeds", sf.seeds, "seeds")->delimiter(',');
    sw->add_option("--workers", sf.workers, "parallel runs per column");
    sw->add_flag("--resume", sf.resume, "keep cells already in the output file");

    RunFlags lrc_flags;
    LrcFlags lf;
    auto* lrc = app.add_subcommand("lrc", "estimate the critical learning rate at initialization");
    lrc_flags.attach(lrc);
    lrc->add_option("--eta0", lf.eta0, "initial guess");
    lrc->add_option("--delta", lf.delta, "binary search tolerance");
    lrc->add_option("--eta-trgt", lf.eta_trgt, "target learning rate; also reports warmup savings");
    lrc->add_option("--warmup-steps", lf.warmup, "warmup steps for the savings estimate");

    RunFlags pcw_flags;
    PcwFlags pf;
    auto* pcw = app.add_subcommand("pcw", "train with persistent catapult warmup");
    pcw_flags.attach(pcw);
    pcw->add_option("-o,--out", out, "trajectory CSV, - for stdout");
    pcw->add_option("--eta-trgt", pf.eta_trgt, "target learning rate");
    pcw->add_option("--delta", pf.delta, "binary search tolerance");
    pcw->add_option("--max-wait", pf.max_wait, "steps to wait for the loss to return");
    pcw->add_option("--catapults", pf.catapults, "CSV log of induced catapults");

    std::string data_dir;
    std::size_t n_train = 1000, n_test = 200;
    std::uint64_t data_seed = 0;
    double noise = 40.0;
    auto* gen = app.add_subcommand("gen-data", "write synthetic data in the CIFAR-10 binary layout");
    gen->add_option("-o,--out", data_dir, "output directory")->required();
    gen->add_option("--n-train", n_train, "training records");
    gen->add_option("--n-test", n_test, "test records");
    gen->add_option("--seed", data_seed, "generator seed");
    gen->add_option("--noise", noise, "per-pixel noise (0-255 scale)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(train_flags, out);
        if (sw->parsed()) return cmd_sweep(sweep_flags, sf, out);
        if (lrc->parsed()) return cmd_lrc(lrc_flags, lf);
        if (pcw->parsed()) return cmd_pcw(pcw_flags, pf, out);
        if (gen->parsed()) return cmd_gen_data(data_dir, n_train, n_test, data_seed, noise);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
