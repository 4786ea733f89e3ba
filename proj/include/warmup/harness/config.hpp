#pragma once

/// \file config.hpp
///
/// JSON run configuration. Every key is optional; absent keys keep their
/// defaults. The same layout is written back by `to_json` so a run can be
/// reproduced from its saved config.

#include "sweep.hpp"
#include "training.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <string_view>

namespace warmup {

using json = nlohmann::json;

namespace detail {

template <class T>
void read_key(const json& j, const char* key, T& out)
{
    if (j.contains(key)) out = j.at(key).get<T>();
}

/// Rejects keys outside `allowed`, so a misspelt option is an error rather
/// than silently ignored.
inline void check_keys(const json& j, std::initializer_list<std::string_view> allowed, const std::string& where)
{
    if (!j.is_object()) throw std::invalid_argument{where + ": expected an object"};
    for (const auto& [key, value] : j.items())
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw std::invalid_argument{where + ": unknown key '" + key + "'"};
}

}  // namespace detail

inline void apply_json(ScheduleSpec& s, const json& j)
{
    detail::check_keys(j, {"kind", "eta_init", "eta_trgt", "warmup_steps", "eta_min", "cosine_steps", "rho", "beta2", "offset"},
                       "schedule");
    if (j.contains("kind")) s.kind = schedule_from_string(j.at("kind").get<std::string>());
    detail::read_key(j, "eta_init", s.eta_init);
    detail::read_key(j, "eta_trgt", s.eta_trgt);
    detail::read_key(j, "warmup_steps", s.warmup_steps);
    detail::read_key(j, "eta_min", s.eta_min);
    detail::read_key(j, "cosine_steps", s.cosine_steps);
    detail::read_key(j, "rho", s.rho);
    detail::read_key(j, "beta2", s.beta2);
    detail::read_key(j, "offset", s.offset);
    s.validate();
}

inline json to_json(const ScheduleSpec& s)
{
    return {{"kind", to_string(s.kind)}, {"eta_init", s.eta_init},         {"eta_trgt", s.eta_trgt},
            {"warmup_steps", s.warmup_steps}, {"eta_min", s.eta_min}, {"cosine_steps", s.cosine_steps},
            {"rho", s.rho},                   {"beta2", s.beta2},     {"offset", s.offset}};
}

inline void apply_json(TrainConfig& c, const json& j)
{
    detail::check_keys(j,
                       {"network", "loss", "optimizer", "schedule", "data", "batch_size", "seed", "steps", "probe_every",
                        "probe_sharpness", "probe_precond", "eval_every", "divergence_factor", "eig_tol", "eig_max_iter",
                        "pcw", "sweep"},
                       "config");
    if (j.contains("network")) {
        const auto& n = j.at("network");
        detail::check_keys(n, {"depth", "width", "parameterization", "sigma_w2_hidden", "sigma_w2_last"}, "network");
        detail::read_key(n, "depth", c.network.depth);
        detail::read_key(n, "width", c.network.width);
        detail::read_key(n, "sigma_w2_hidden", c.network.sigma_w2_hidden);
        detail::read_key(n, "sigma_w2_last", c.network.sigma_w2_last);
        if (n.contains("parameterization"))
            c.network.parameterization = parameterization_from_string(n.at("parameterization").get<std::string>());
    }
    if (j.contains("loss")) c.loss = loss_from_string(j.at("loss").get<std::string>());
    if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        detail::check_keys(o, {"kind", "beta", "beta1", "beta2", "eps", "gi_scale"}, "optimizer");
        auto& opt = c.run.optimizer;
        if (o.contains("kind")) opt.kind = optimizer_from_string(o.at("kind").get<std::string>());
        detail::read_key(o, "beta", opt.beta);
        detail::read_key(o, "beta1", opt.beta1);
        detail::read_key(o, "beta2", opt.beta2);
        detail::read_key(o, "eps", opt.eps);
        detail::read_key(o, "gi_scale", opt.gi_scale);
        opt.validate();
    }
    if (j.contains("schedule")) apply_json(c.run.schedule, j.at("schedule"));
    if (j.contains("data")) {
        const auto& d = j.at("data");
        detail::check_keys(d,
                           {"kind", "n_train", "n_test", "classes", "in_dim", "out_dim", "class_separation", "noise",
                            "subset", "normalize", "augmentation", "path", "seed"},
                           "data");
        auto& ds = c.data;
        if (d.contains("kind")) ds.kind = dataset_from_string(d.at("kind").get<std::string>());
        detail::read_key(d, "n_train", ds.n_train);
        detail::read_key(d, "n_test", ds.n_test);
        detail::read_key(d, "classes", ds.classes);
        detail::read_key(d, "in_dim", ds.in_dim);
        detail::read_key(d, "out_dim", ds.out_dim);
        detail::read_key(d, "class_separation", ds.class_separation);
        detail::read_key(d, "noise", ds.noise);
        detail::read_key(d, "subset", ds.subset);
        detail::read_key(d, "normalize", ds.normalize);
        detail::read_key(d, "path", ds.path);
        detail::read_key(d, "seed", ds.seed);
        if (d.contains("augmentation")) ds.augmentation = augmentation_from_string(d.at("augmentation").get<std::string>());
    }
    detail::read_key(j, "batch_size", c.batch_size);
    detail::read_key(j, "seed", c.seed);
    detail::read_key(j, "steps", c.run.steps);
    detail::read_key(j, "probe_every", c.run.probe_every);
    detail::read_key(j, "probe_sharpness", c.run.probe_sharpness);
    detail::read_key(j, "probe_precond", c.run.probe_precond);
    detail::read_key(j, "eval_every", c.run.eval_every);
    detail::read_key(j, "divergence_factor", c.run.divergence_factor);
    detail::read_key(j, "eig_tol", c.run.eig_tol);
    detail::read_key(j, "eig_max_iter", c.run.eig_max_iter);
    c.run.seed = c.seed;
    if (j.contains("pcw")) {
        const auto& p = j.at("pcw");
        detail::check_keys(p, {"eta_trgt", "delta", "eta0", "max_wait"}, "pcw");
        PcwConfig pc;
        detail::read_key(p, "eta_trgt", pc.eta_trgt);
        detail::read_key(p, "delta", pc.delta);
        detail::read_key(p, "eta0", pc.eta0);
        detail::read_key(p, "max_wait", pc.max_wait);
        c.run.pcw = pc;
    }
}

inline json to_json(const TrainConfig& c)
{
    const auto& o = c.run.optimizer;
    const auto& d = c.data;
    json j = {
        {"network",
         {{"depth", c.network.depth},
          {"width", c.network.width},
          {"parameterization", to_string(c.network.parameterization)},
          {"sigma_w2_hidden", c.network.sigma_w2_hidden},
          {"sigma_w2_last", c.network.sigma_w2_last}}},
        {"loss", to_string(c.loss)},
        {"optimizer",
         {{"kind", to_string(o.kind)},
          {"beta", o.beta},
          {"beta1", o.beta1},
          {"beta2", o.beta2},
          {"eps", o.eps},
          {"gi_scale", o.gi_scale}}},
        {"schedule", to_json(c.run.schedule)},
        {"data",
         {{"kind", to_string(d.kind)},
          {"n_train", d.n_train},
          {"n_test", d.n_test},
          {"classes", d.classes},
          {"in_dim", d.in_dim},
          {"out_dim", d.out_dim},
          {"class_separation", d.class_separation},
          {"noise", d.noise},
          {"subset", d.subset},
          {"normalize", d.normalize},
          {"augmentation", to_string(d.augmentation)},
          {"path", d.path},
          {"seed", d.seed}}},
        {"batch_size", c.batch_size},
        {"seed", c.seed},
        {"steps", c.run.steps},
        {"probe_every", c.run.probe_every},
        {"probe_sharpness", c.run.probe_sharpness},
        {"probe_precond", c.run.probe_precond},
        {"eval_every", c.run.eval_every},
        {"divergence_factor", c.run.divergence_factor},
        {"eig_tol", c.run.eig_tol},
        {"eig_max_iter", c.run.eig_max_iter},
    };
    if (c.run.pcw)
        j["pcw"] = {{"eta_trgt", c.run.pcw->eta_trgt},
                    {"delta", c.run.pcw->delta},
                    {"eta0", c.run.pcw->eta0},
                    {"max_wait", c.run.pcw->max_wait}};
    return j;
}

inline void apply_json(SweepSpec& s, const json& j)
{
    apply_json(s.base, j);
    if (!j.contains("sweep")) return;
    const auto& w = j.at("sweep");
    detail::check_keys(w, {"warmup_steps", "grid", "base_lr", "x_step", "max_columns", "seeds", "workers"}, "sweep");
    detail::read_key(w, "warmup_steps", s.warmup_steps);
    if (w.contains("grid")) s.grid = grid_from_string(w.at("grid").get<std::string>());
    detail::read_key(w, "base_lr", s.geometric_base);
    detail::read_key(w, "x_step", s.x_step);
    detail::read_key(w, "max_columns", s.max_columns);
    detail::read_key(w, "seeds", s.seeds);
    detail::read_key(w, "workers", s.workers);
}

inline json to_json(const SweepSpec& s)
{
    json j = to_json(s.base);
    j["sweep"] = {{"warmup_steps", s.warmup_steps}, {"grid", to_string(s.grid)},       {"base_lr", s.geometric_base},
                  {"x_step", s.x_step},             {"max_columns", s.max_columns}, {"seeds", s.seeds},
                  {"workers", s.workers}};
    return j;
}

inline json load_json_file(const std::string& path)
{
    std::ifstream in{path};
    if (!in) throw std::runtime_error{"cannot open config " + path};
    return json::parse(in);
}

}  // namespace warmup
