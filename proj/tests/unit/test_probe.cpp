#include "test_util.hpp"

#include "warmup/probe.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <cmath>

using namespace warmup;
using namespace warmup::testing;

namespace {

LinearOperator as_operator(const SymMatrix& a)
{
    return [&a](std::span<const double> x, std::span<double> y) { a.apply(x, y); };
}

/// L(w1, w2) = (w2 w1 x - y)^2 with analytic gradient.
struct LinearChain {
    double x = 1.5, y = 0.7;
    std::size_t dim() const { return 2; }
    double loss(std::span<const double> w) const { return std::pow(w[1] * w[0] * x - y, 2); }
    double loss_and_grad(std::span<const double> w, std::span<double> g) const
    {
        const double r = w[1] * w[0] * x - y;
        g[0] = 2 * r * w[1] * x;
        g[1] = 2 * r * w[0] * x;
        return r * r;
    }
};

/// Hessian from second differences of the loss alone; independent of the
/// gradient code.
template <class F>
SymMatrix loss_only_hessian(const F& f, const FlatVector& theta, double h)
{
    const std::size_t n = theta.size();
    SymMatrix out{n};
    FlatVector p = theta;
    auto at = [&](std::size_t i, double di, std::size_t j, double dj) {
        p[i] += di;
        p[j] += dj;
        const double v = f.loss(p);
        p[i] -= di;
        p[j] -= dj;
        return v;
    };
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j)
            out.set(i, j,
                    (at(i, h, j, h) - at(i, h, j, -h) - at(i, -h, j, h) + at(i, -h, j, -h)) / (4 * h * h));
    return out;
}

}  // namespace

TEST(Hvp, ExactOnQuadratic)
{
    const QuadraticOracle q{SymMatrix::from_rows({{2, 1}, {1, 3}})};
    const FlatVector theta{0.3, -1.2};
    const auto hv = hvp(q, theta, FlatVector{1, 0});
    EXPECT_NEAR(hv[0], 2.0, 1e-10);
    EXPECT_NEAR(hv[1], 1.0, 1e-10);
    // any eps0 gives the Hessian action on a quadratic
    const auto coarse = hvp(q, theta, FlatVector{1, 0}, 0.5);
    EXPECT_NEAR(coarse[0], 2.0, 1e-12);
    EXPECT_NEAR(coarse[1], 1.0, 1e-12);
}

TEST(Hvp, LinearInDirection)
{
    const QuadraticOracle q{SymMatrix::from_rows({{2, 1}, {1, 3}})};
    const FlatVector theta{0.0, 0.0};
    const auto a = hvp(q, theta, FlatVector{0.6, -0.8});
    const auto b = hvp(q, theta, FlatVector{1.2, -1.6});
    EXPECT_EQ(b[0], 2 * a[0]);
    EXPECT_EQ(b[1], 2 * a[1]);
}

TEST(Hvp, RejectsZeroDirection)
{
    const QuadraticOracle q{SymMatrix::diagonal(FlatVector{1, 1})};
    EXPECT_THROW(hvp(q, FlatVector{1, 1}, FlatVector{0, 0}), std::invalid_argument);
}

TEST(Hvp, SecondOrderInEps)
{
    RngStream rng{8};
    const auto spec = small_net();
    const auto p = init_params(spec, rng);
    const auto b = random_batch(rng, spec.in_dim, spec.out_dim, 8);
    const Mlp net{spec};
    const FcnObjective f{net, LossKind::XENT, b};
    const auto v = random_unit_vector(rng, f.dim());
    auto diff = [&](double eps) {
        const auto a = hvp(f, p.values, v, eps);
        const auto c = hvp(f, p.values, v, eps / 2);
        FlatVector d(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - c[i];
        return norm(d) / norm(c);
    };
    const double ratio = diff(2e-3) / diff(1e-3);
    EXPECT_GT(ratio, 3.5);
    EXPECT_LT(ratio, 4.5);
}

TEST(TopEigen, Diagonal)
{
    const auto a = SymMatrix::diagonal(FlatVector{3, 1});
    RngStream rng{1};
    const auto est = top_eigen(as_operator(a), 2, rng);
    EXPECT_TRUE(est.converged);
    EXPECT_NEAR(est.value, 3.0, 1e-9);
    EXPECT_NEAR(std::abs(est.vector[0]), 1.0, 1e-4);
}

TEST(TopEigen, NegativeDominantIsShifted)
{
    const auto a = SymMatrix::diagonal(FlatVector{-5, 1});
    RngStream rng{2};
    const auto est = top_eigen(as_operator(a), 2, rng);
    EXPECT_TRUE(est.converged);
    EXPECT_NEAR(est.value, 1.0, 1e-8);
}

TEST(TopEigen, OppositeSignPairFallsBackToRadiusShift)
{
    // +-2 never settles under plain power iteration.
    const auto a = SymMatrix::from_rows({{0, 2}, {2, 0}});
    RngStream rng{3};
    const auto est = top_eigen(as_operator(a), 2, rng);
    EXPECT_NEAR(est.value, 2.0, 1e-6);
}

TEST(TopEigen, ZeroOperator)
{
    const SymMatrix a{4};
    RngStream rng{4};
    const auto est = top_eigen(as_operator(a), 4, rng);
    EXPECT_TRUE(est.converged);
    EXPECT_EQ(est.value, 0.0);
}

TEST(TopEigen, RestartBudgetIsBounded)
{
    // Nearly equal eigenvalues converge slowly; the protocol must stop
    // after at most 10 restarts and report honestly.
    const auto a = SymMatrix::diagonal(FlatVector{1.0, 1.0 - 1e-7, 0.5});
    RngStream rng{5};
    const auto est = top_eigen(as_operator(a), 3, rng, 1e-15, 1000);
    EXPECT_LE(est.restarts, kMaxRestarts);
    EXPECT_LE(est.iterations, 2 * (kMaxRestarts * kItersBeforeRestart + 1000));
    EXPECT_NEAR(est.value, 1.0, 1e-6);
}

TEST(TopEigen, RejectsEmptyOperator)
{
    RngStream rng{6};
    const SymMatrix a{1};
    EXPECT_THROW(top_eigen(as_operator(a), 0, rng), std::invalid_argument);
}

TEST(TopEigen, MatchesDenseOracleOnRandomMatrices)
{
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        RngStream gen{1000 + seed};
        const auto a = SymMatrix::random_gaussian(gen, 30);
        const auto oracle = dense_top_eig(a);
        RngStream rng{seed};
        const auto est = top_eigen(as_operator(a), 30, rng);
        EXPECT_NEAR(est.value, oracle.value, 1e-6 * std::abs(oracle.value)) << "seed " << seed;
    }
}

TEST(TopEigen, ConvergedValueMatchesRayleighQuotient)
{
    RngStream gen{42};
    const auto a = SymMatrix::random_gaussian(gen, 12);
    RngStream rng{1};
    const auto est = top_eigen(as_operator(a), 12, rng);
    ASSERT_TRUE(est.converged);
    EXPECT_NEAR(norm(est.vector), 1.0, 1e-12);
    const double rayleigh = dot(est.vector, a.apply(est.vector));
    EXPECT_LE(std::abs(rayleigh - est.value), 1e-6 * std::max(1.0, std::abs(est.value)));
}

TEST(TopEigen, ScaleEquivariant)
{
    RngStream gen{9};
    const auto a = SymMatrix::random_gaussian(gen, 20);
    const double c = 7.5;
    LinearOperator scaled = [&](std::span<const double> x, std::span<double> y) {
        a.apply(x, y);
        for (auto& yi : y) yi *= c;
    };
    RngStream r1{1}, r2{1};
    const auto base = top_eigen(as_operator(a), 20, r1);
    const auto big = top_eigen(scaled, 20, r2);
    EXPECT_NEAR(big.value, c * base.value, 1e-6 * std::abs(c * base.value));
}

TEST(Sharpness, QuadraticDiag41)
{
    const QuadraticOracle q{SymMatrix::diagonal(FlatVector{4, 1})};
    RngStream rng{7};
    EXPECT_NEAR(sharpness(q, FlatVector{0.5, 0.5}, rng).value, 4.0, 1e-7);
}

TEST(Sharpness, LinearChainMatchesClosedFormHessian)
{
    const LinearChain f;
    const FlatVector w{0.8, -1.1};
    const double r = w[1] * w[0] * f.x - f.y;
    const auto h = SymMatrix::from_rows({{2 * w[1] * w[1] * f.x * f.x, 2 * f.x * (w[0] * w[1] * f.x + r)},
                                         {2 * f.x * (w[0] * w[1] * f.x + r), 2 * w[0] * w[0] * f.x * f.x}});
    RngStream rng{11};
    const auto est = sharpness(f, w, rng);
    EXPECT_NEAR(est.value, dense_top_eig(h).value, 1e-6);
}

TEST(Sharpness, FcnMatchesDenseHessian)
{
    NetworkSpec s;
    s.depth = 3;
    s.width = 10;
    s.in_dim = 5;
    s.out_dim = 3;
    RngStream rng{12};
    const auto p = init_params(s, rng);
    ASSERT_EQ(p.values.size(), 203u);
    const auto b = random_batch(rng, s.in_dim, s.out_dim, 16);
    const Mlp net{s};
    const FcnObjective f{net, LossKind::MSE, b};
    // A small oracle step keeps the probes on one side of every ReLU kink.
    const auto oracle = dense_top_eig(loss_only_hessian(f, p.values, 2e-5));
    RngStream probe{13};
    const auto est = sharpness(f, p.values, probe);
    EXPECT_TRUE(est.converged);
    EXPECT_NEAR(est.value, oracle.value, 1e-4 * oracle.value);
}

TEST(PreconditionedSharpness, DiagonalExample)
{
    // P = diag(4, 1) with no beta1 factor (beta1 = 0) and eps = 0.
    const auto h = SymMatrix::diagonal(FlatVector{8, 1});
    const auto precond = adam_preconditioner(FlatVector{4, 1}, 1, 0.0, 0.0, 0.0);
    EXPECT_EQ(precond, (FlatVector{4, 1}));
    RngStream rng{1};
    EXPECT_NEAR(preconditioned_top_eigen(as_operator(h), precond, rng).value, 2.0, 1e-8);
}

TEST(PreconditionedSharpness, ScalarPreconditioner)
{
    RngStream gen{3};
    auto h = SymMatrix::random_gaussian(gen, 10);
    for (std::size_t i = 0; i < 10; ++i) h.set(i, i, h(i, i) + 10.0);
    const FlatVector precond(10, 2.5);
    RngStream r1{1}, r2{1};
    const double plain = top_eigen(as_operator(h), 10, r1).value;
    const double pre = preconditioned_top_eigen(as_operator(h), precond, r2).value;
    EXPECT_NEAR(pre, plain / 2.5, 1e-6 * plain);
}

TEST(PreconditionedSharpness, PreconditionerIncludesBiasCorrections)
{
    const auto p = adam_preconditioner(FlatVector{0.001}, 1, 0.9, 0.999, 1e-8);
    EXPECT_NEAR(p[0], 0.1 * (1.0 + 1e-8), 1e-15);
    EXPECT_THROW(adam_preconditioner(FlatVector{-1e-3}, 1, 0.9, 0.999, 1e-8), std::domain_error);
    EXPECT_THROW(adam_preconditioner(FlatVector{1.0}, 0, 0.9, 0.999, 1e-8), std::invalid_argument);
}

TEST(PreconditionedSharpness, MatchesNonSymmetricDenseEigenvalue)
{
    RngStream gen{17};
    const std::size_t n = 12;
    const auto h = SymMatrix::random_gaussian(gen, n);
    FlatVector v(n);
    for (auto& vi : v) vi = 0.1 + gen.uniform();
    const auto precond = adam_preconditioner(v, 5, 0.9, 0.999, 1e-8);
    Eigen::MatrixXd pinv_h = h.to_dense();
    for (std::size_t i = 0; i < n; ++i) pinv_h.row(static_cast<Eigen::Index>(i)) /= precond[i];
    const Eigen::VectorXcd eig = Eigen::EigenSolver<Eigen::MatrixXd>{pinv_h}.eigenvalues();
    double oracle = -INFINITY;
    for (const auto& z : eig) oracle = std::max(oracle, z.real());
    RngStream rng{2};
    const auto est = preconditioned_top_eigen(as_operator(h), precond, rng);
    EXPECT_NEAR(est.value, oracle, 1e-8 * std::max(1.0, std::abs(oracle)));
}

TEST(PreconditionedSharpness, RequiresSecondMoment)
{
    const QuadraticOracle q{SymMatrix::diagonal(FlatVector{1, 1})};
    OptimizerConfig cfg;
    cfg.kind = OptimizerKind::ADAM;
    OptimizerState st;
    st.t = 1;
    RngStream rng{1};
    EXPECT_THROW(preconditioned_sharpness(q, FlatVector{1, 1}, st, cfg, rng), std::invalid_argument);
}

TEST(ThresholdCurves, Examples)
{
    EXPECT_NEAR(threshold_curves(0.1, 0.9).momentum, 38.0, 1e-12);
    EXPECT_NEAR(threshold_curves(0.001, 0.9, 0.9).adam, 38000.0, 1e-8);
    EXPECT_EQ(threshold_curves(1.0).gd, 2.0);
    EXPECT_THROW(threshold_curves(0.0), std::invalid_argument);
    EXPECT_THROW(threshold_curves(-1.0), std::invalid_argument);
}

TEST(ThresholdCurves, PositiveAndDecreasing)
{
    double prev_gd = INFINITY, prev_mom = INFINITY, prev_adam = INFINITY;
    for (double eta = 1e-4; eta < 10; eta *= 1.7) {
        const auto c = threshold_curves(eta);
        EXPECT_GT(c.gd, 0);
        EXPECT_LT(c.gd, prev_gd);
        EXPECT_LT(c.momentum, prev_mom);
        EXPECT_LT(c.adam, prev_adam);
        prev_gd = c.gd;
        prev_mom = c.momentum;
        prev_adam = c.adam;
    }
}

TEST(Sharpness, ReproducesGdStabilityBoundary)
{
    const QuadraticOracle q{SymMatrix::from_rows({{3, 1}, {1, 2}})};
    RngStream rng{5};
    const double lambda = sharpness(q, FlatVector{1, 1}, rng).value;
    auto diverges = [&](double eta) {
        FlatVector theta{1, 1}, g(2);
        for (int t = 0; t < 5000; ++t) {
            q.loss_and_grad(theta, g);
            axpy(-eta, g, theta);
        }
        return norm(theta) > 1.0;
    };
    EXPECT_FALSE(diverges(2.0 / lambda * 0.999));
    EXPECT_TRUE(diverges(2.0 / lambda * 1.001));
}
