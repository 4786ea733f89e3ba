#pragma once

/// \file csv.hpp
///
/// Trajectory and phase-diagram CSV files. Reals are written with 17
/// significant digits so they round-trip; unmeasured values are empty.

#include "training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace warmup {

inline constexpr std::string_view kTrajectoryHeader =
    "step,lr,minibatch_loss,train_loss,test_loss,test_acc,sharpness,precond_sharpness,thr_gd,thr_mom,thr_adam,event";
inline constexpr std::string_view kPhaseHeader = "warmup_steps,target_lr,best_test_acc,final_train_acc,status,steps_run,seed";

inline std::string format_real(double v)
{
    if (std::isnan(v)) return {};
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline double parse_real(std::string_view s)
{
    if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    std::size_t used = 0;
    const std::string str{s};
    const double v = std::stod(str, &used);
    if (used != str.size()) throw std::invalid_argument{"not a number: " + str};
    return v;
}

inline std::vector<std::string> split_csv_line(std::string_view line)
{
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.emplace_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    if (!out.empty() && !out.back().empty() && out.back().back() == '\r') out.back().pop_back();
    return out;
}

inline void write_trajectory_csv(std::ostream& out, const std::vector<TrajectoryRow>& rows)
{
    out << kTrajectoryHeader << '\n';
    for (const auto& r : rows) {
        out << r.step << ',' << format_real(r.lr) << ',' << format_real(r.minibatch_loss) << ','
            << format_real(r.train_loss) << ',' << format_real(r.test_loss) << ',' << format_real(r.test_acc) << ','
            << format_real(r.sharpness) << ',' << format_real(r.precond_sharpness) << ',' << format_real(r.thr_gd)
            << ',' << format_real(r.thr_mom) << ',' << format_real(r.thr_adam) << ',' << to_string(r.event) << '\n';
    }
}

inline std::string trajectory_csv(const std::vector<TrajectoryRow>& rows)
{
    std::ostringstream s;
    write_trajectory_csv(s, rows);
    return s.str();
}

struct PhaseCell {
    std::int64_t warmup_steps = 1;
    double target_lr = 0.0;
    double best_test_acc = kNaN;
    double final_train_acc = kNaN;
    RunStatus status = RunStatus::CONVERGED;
    std::int64_t steps_run = 0;
    std::uint64_t seed = 0;
};

inline void write_phase_header(std::ostream& out) { out << kPhaseHeader << '\n'; }

inline void write_phase_row(std::ostream& out, const PhaseCell& c)
{
    out << c.warmup_steps << ',' << format_real(c.target_lr) << ',' << format_real(c.best_test_acc) << ','
        << format_real(c.final_train_acc) << ',' << to_string(c.status) << ',' << c.steps_run << ',' << c.seed
        << '\n';
}

inline void write_phase_csv(std::ostream& out, const std::vector<PhaseCell>& cells)
{
    write_phase_header(out);
    for (const auto& c : cells) write_phase_row(out, c);
}

/// Reads a phase CSV; the header must match exactly.
inline std::vector<PhaseCell> read_phase_csv(std::istream& in)
{
    std::string line;
    if (!std::getline(in, line)) return {};
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kPhaseHeader) throw std::runtime_error{"phase CSV: unexpected header: " + line};
    std::vector<PhaseCell> cells;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 7) throw std::runtime_error{"phase CSV: line " + std::to_string(lineno) + " has wrong arity"};
        PhaseCell c;
        c.warmup_steps = std::stoll(f[0]);
        c.target_lr = parse_real(f[1]);
        c.best_test_acc = parse_real(f[2]);
        c.final_train_acc = parse_real(f[3]);
        c.status = status_from_string(f[4]);
        c.steps_run = std::stoll(f[5]);
        c.seed = std::stoull(f[6]);
        cells.push_back(c);
    }
    return cells;
}

}  // namespace warmup
