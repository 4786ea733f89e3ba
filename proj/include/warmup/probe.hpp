#pragma once

/// \file probe.hpp
///
/// Curvature probes: Hessian-vector products (exact where the objective
/// provides them, else central differences of the gradient), power iteration for the top Hessian eigenvalue (sharpness), the
/// same for the Adam-preconditioned Hessian, and the instability threshold
/// curves that sharpness is compared against.

#include "model.hpp"
#include "numerics.hpp"
#include "optim.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>

namespace warmup {

inline constexpr double kDefaultHvpEps = 1e-4;
inline constexpr double kDefaultEigTol = 1e-9;
inline constexpr int kDefaultEigMaxIter = 1000;
inline constexpr int kItersBeforeRestart = 100;
inline constexpr int kMaxRestarts = 10;

/// y = Op x, for a symmetric operator.
using LinearOperator = std::function<void(std::span<const double>, std::span<double>)>;

struct EigEstimate {
    double value = 0.0;
    FlatVector vector;  ///< unit norm
    int iterations = 0;
    int restarts = 0;
    bool converged = false;
};

/// Hessian-vector product: (g(theta + eps v/|v|) - g(theta - eps v/|v|)) / (2 eps) * |v|.
template <Objective F>
FlatVector hvp(const F& f, std::span<const double> theta, std::span<const double> v, double eps0 = kDefaultHvpEps)
{
    const double nv = norm(v);
    if (!(nv > 0.0)) throw std::invalid_argument{"hvp: direction must be non-zero"};
    if (!(eps0 > 0.0)) throw std::invalid_argument{"hvp: eps0 must be positive"};
    const std::size_t n = theta.size();
    FlatVector shifted(theta.begin(), theta.end());
    FlatVector g_plus(n), g_minus(n);
    for (std::size_t i = 0; i < n; ++i) shifted[i] = theta[i] + eps0 * (v[i] / nv);
    f.loss_and_grad(shifted, g_plus);
    for (std::size_t i = 0; i < n; ++i) shifted[i] = theta[i] - eps0 * (v[i] / nv);
    f.loss_and_grad(shifted, g_minus);
    FlatVector out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = (g_plus[i] - g_minus[i]) / (2.0 * eps0) * nv;
    return out;
}

/// H v: exact when the objective supplies it, otherwise `hvp` with step eps0.
template <Objective F>
void curvature_product(const F& f, std::span<const double> theta, std::span<const double> v, std::span<double> out,
                       double eps0 = kDefaultHvpEps)
{
    if constexpr (ExactCurvature<F>) {
        f.hessian_vector(theta, v, out);
    } else {
        const auto hx = hvp(f, theta, v, eps0);
        std::copy(hx.begin(), hx.end(), out.begin());
    }
}

namespace detail {

/// Power iteration with the restart protocol: up to `kItersBeforeRestart`
/// iterations per attempt, a fresh random start on each of at most
/// `kMaxRestarts` restarts, and `max_iter` iterations on the last attempt.
/// Tracks the largest |Op v| seen, a lower bound on the spectral radius.
inline EigEstimate power_iteration(const LinearOperator& op, std::size_t dim, RngStream& rng, double tol,
                                   int max_iter, double& radius_bound)
{
    EigEstimate est;
    FlatVector w(dim);
    for (int attempt = 0; attempt <= kMaxRestarts; ++attempt) {
        est.restarts = attempt;
        const int cap = attempt == kMaxRestarts ? max_iter : std::min(kItersBeforeRestart, max_iter);
        FlatVector v = random_unit_vector(rng, dim);
        double previous = 0.0;
        for (int it = 0; it < cap; ++it) {
            ++est.iterations;
            op(v, w);
            const double rayleigh = dot(v, w);
            const double nw = norm(w);
            est.value = rayleigh;
            est.vector = v;
            if (!std::isfinite(rayleigh) || !std::isfinite(nw)) break;
            radius_bound = std::max(radius_bound, nw);
            if (nw == 0.0) {
                est.converged = true;
                return est;
            }
            if (it > 0 && std::abs(rayleigh - previous) <= tol * std::max(1.0, std::abs(rayleigh))) {
                est.converged = true;
                return est;
            }
            previous = rayleigh;
            for (std::size_t i = 0; i < dim; ++i) v[i] = w[i] / nw;
        }
    }
    est.converged = false;
    return est;
}

}  // namespace detail

/// Algebraically largest eigenvalue of a symmetric operator.
///
/// Power iteration finds the eigenvalue of largest magnitude. When that is
/// negative, or when the iteration does not settle (typically two dominant
/// eigenvalues of opposite sign), the operator is shifted by the observed
/// spectral radius so the largest eigenvalue dominates, and the shift is
/// subtracted afterwards. Non-convergence is reported, never thrown.
inline EigEstimate top_eigen(const LinearOperator& op, std::size_t dim, RngStream& rng, double tol = kDefaultEigTol,
                             int max_iter = kDefaultEigMaxIter)
{
    if (dim == 0) throw std::invalid_argument{"top_eigen: empty operator"};
    double radius = 0.0;
    EigEstimate first = detail::power_iteration(op, dim, rng, tol, max_iter, radius);
    if (first.converged && first.value >= 0.0) return first;
    if (!std::isfinite(radius) || radius == 0.0) return first;

    const double shift = first.converged ? std::abs(first.value) : radius;
    LinearOperator shifted = [&](std::span<const double> x, std::span<double> y) {
        op(x, y);
        for (std::size_t i = 0; i < x.size(); ++i) y[i] += shift * x[i];
    };
    double unused = 0.0;
    EigEstimate second = detail::power_iteration(shifted, dim, rng, tol, max_iter, unused);
    second.value -= shift;
    second.iterations += first.iterations;
    second.restarts = std::max(first.restarts, second.restarts);
    return second;
}

/// Top Hessian eigenvalue of `f` at `theta`. `eps0` is only used by
/// objectives without exact curvature.
template <Objective F>
EigEstimate sharpness(const F& f, std::span<const double> theta, RngStream& rng, double tol = kDefaultEigTol,
                      int max_iter = kDefaultEigMaxIter, double eps0 = kDefaultHvpEps)
{
    LinearOperator op = [&](std::span<const double> x, std::span<double> y) { curvature_product(f, theta, x, y, eps0); };
    return top_eigen(op, f.dim(), rng, tol, max_iter);
}

/// Diagonal of Adam's preconditioner (1 - beta1^t) [diag(v / (1 - beta2^t)) + eps].
inline FlatVector adam_preconditioner(std::span<const double> v, std::int64_t t, double beta1, double beta2,
                                      double eps)
{
    if (t < 1) throw std::invalid_argument{"adam_preconditioner: t must be >= 1"};
    const double td = static_cast<double>(t);
    const double m_correction = 1.0 - std::pow(beta1, td);
    const double v_correction = 1.0 - std::pow(beta2, td);
    FlatVector p(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i] < 0.0) throw std::domain_error{"adam_preconditioner: negative second moment"};
        p[i] = m_correction * (v[i] / v_correction + eps);
    }
    return p;
}

/// Top eigenvalue of P^-1 H through the similar operator P^-1/2 H P^-1/2.
inline EigEstimate preconditioned_top_eigen(const LinearOperator& hessian, std::span<const double> precond,
                                            RngStream& rng, double tol = kDefaultEigTol,
                                            int max_iter = kDefaultEigMaxIter)
{
    FlatVector inv_sqrt(precond.size());
    for (std::size_t i = 0; i < precond.size(); ++i) {
        if (!(precond[i] > 0.0)) throw std::domain_error{"preconditioner must be positive definite"};
        inv_sqrt[i] = 1.0 / std::sqrt(precond[i]);
    }
    FlatVector scaled(precond.size());
    LinearOperator op = [&](std::span<const double> x, std::span<double> y) {
        for (std::size_t i = 0; i < x.size(); ++i) scaled[i] = inv_sqrt[i] * x[i];
        hessian(scaled, y);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] *= inv_sqrt[i];
    };
    return top_eigen(op, precond.size(), rng, tol, max_iter);
}

/// Pre-conditioned sharpness of `f` at `theta` under the given Adam state.
template <Objective F>
EigEstimate preconditioned_sharpness(const F& f, std::span<const double> theta, const OptimizerState& state,
                                     const OptimizerConfig& cfg, RngStream& rng, double tol = kDefaultEigTol,
                                     int max_iter = kDefaultEigMaxIter, double eps0 = kDefaultHvpEps)
{
    if (state.v.size() != theta.size()) throw std::invalid_argument{"preconditioned_sharpness: missing second moment"};
    const auto precond = adam_preconditioner(state.v, state.t, cfg.beta1, cfg.beta2, cfg.eps);
    LinearOperator op = [&](std::span<const double> x, std::span<double> y) { curvature_product(f, theta, x, y, eps0); };
    return preconditioned_top_eigen(op, precond, rng, tol, max_iter);
}

struct ThresholdCurves {
    double gd;        ///< 2 / eta
    double momentum;  ///< (2 + 2 beta) / eta
    double adam;      ///< (2 + 2 beta1) / (eta (1 - beta1))
};

inline ThresholdCurves threshold_curves(double eta, double beta = 0.9, double beta1 = 0.9)
{
    if (!(eta > 0.0)) throw std::invalid_argument{"threshold_curves: learning rate must be positive"};
    return {2.0 / eta, (2.0 + 2.0 * beta) / eta, (2.0 + 2.0 * beta1) / (eta * (1.0 - beta1))};
}

}  // namespace warmup
