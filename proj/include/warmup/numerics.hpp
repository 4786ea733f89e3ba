#pragma once

/// \file numerics.hpp
///
/// Flat vectors, the seeded random stream, packed symmetric matrices and
/// the truncated-normal sampler used for weight initialization. Everything
/// is double precision.

#include <Eigen/Dense>

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace warmup {

using FlatVector = std::vector<double>;

// ----------------------------------------------------------------------------
// Vector kernels
// ----------------------------------------------------------------------------

inline double dot(std::span<const double> x, std::span<const double> y)
{
    assert(x.size() == y.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * y[i];
    return acc;
}

inline double norm(std::span<const double> x) { return std::sqrt(dot(x, x)); }

/// y <- a * x + y
inline void axpy(double a, std::span<const double> x, std::span<double> y)
{
    assert(x.size() == y.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

inline void scale(double a, std::span<double> x)
{
    for (auto& xi : x) xi *= a;
}

inline bool all_finite(std::span<const double> x)
{
    return std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); });
}

// ----------------------------------------------------------------------------
// Random stream
// ----------------------------------------------------------------------------

/// Seeded random stream.
///
/// The engine is `std::mt19937_64`, whose output sequence is fixed by the
/// standard. Uniforms take the top 53 bits of each draw and normals use the
/// Marsaglia polar method, so no implementation-defined `std::*_distribution`
/// is involved. Outputs are bit-identical for a given seed wherever `log` and
/// `sqrt` are correctly rounded.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : engine_{seed}, seed_{seed} {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t position() const noexcept { return draws_; }

    std::uint64_t next_u64()
    {
        ++draws_;
        return engine_();
    }

    /// Uniform on [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer on [0, n).
    std::uint64_t below(std::uint64_t n)
    {
        if (n == 0) throw std::invalid_argument{"RngStream::below: empty range"};
        // Lemire's multiply-shift with rejection.
        auto x = next_u64();
        auto m = static_cast<unsigned __int128>(x) * n;
        auto low = static_cast<std::uint64_t>(m);
        if (low < n) {
            const std::uint64_t threshold = (0 - n) % n;
            while (low < threshold) {
                x = next_u64();
                m = static_cast<unsigned __int128>(x) * n;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    double normal()
    {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        has_spare_ = true;
        return u * f;
    }

    /// Independent child stream, keyed by `stream_id`.
    RngStream split(std::uint64_t stream_id) const
    {
        return RngStream{splitmix64(seed_ ^ splitmix64(stream_id + 0x632be59bd9b4e019ULL))};
    }

    template <class T>
    void shuffle(std::vector<T>& xs)
    {
        for (std::size_t i = xs.size(); i > 1; --i) std::swap(xs[i - 1], xs[below(i)]);
    }

private:
    static std::uint64_t splitmix64(std::uint64_t z)
    {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::mt19937_64 engine_;
    std::uint64_t seed_;
    std::uint64_t draws_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// A unit vector drawn uniformly from the sphere.
inline FlatVector random_unit_vector(RngStream& rng, std::size_t n)
{
    FlatVector v(n);
    double nrm = 0.0;
    do {
        for (auto& x : v) x = rng.normal();
        nrm = norm(v);
    } while (nrm == 0.0);
    scale(1.0 / nrm, v);
    return v;
}

// ----------------------------------------------------------------------------
// Truncated normal
// ----------------------------------------------------------------------------

inline constexpr double kTruncationBound = 2.0;

/// Variance of a standard normal truncated to [-2, 2]:
/// 1 - 2 b phi(b) / (2 Phi(b) - 1) with b = 2.
inline double truncated_unit_variance()
{
    constexpr double b = kTruncationBound;
    const double phi = std::exp(-0.5 * b * b) / std::sqrt(2.0 * std::numbers::pi);
    const double mass = std::erf(b / std::numbers::sqrt2);
    return 1.0 - 2.0 * b * phi / mass;
}

/// `n` draws from N(0, 1) truncated to [-2, 2], rescaled so the output
/// variance is `sigma^2`.
inline FlatVector truncated_normal(RngStream& rng, std::size_t n, double sigma)
{
    if (!std::isfinite(sigma) || sigma < 0.0)
        throw std::invalid_argument{"truncated_normal: sigma must be finite and >= 0"};
    FlatVector out(n, 0.0);
    if (sigma == 0.0) return out;
    const double rescale = sigma / std::sqrt(truncated_unit_variance());
    for (auto& x : out) {
        double z;
        do {
            z = rng.normal();
        } while (std::abs(z) > kTruncationBound);
        x = z * rescale;
    }
    return out;
}

// ----------------------------------------------------------------------------
// Symmetric matrices
// ----------------------------------------------------------------------------

/// Dense symmetric matrix; only the lower triangle is stored.
class SymMatrix {
public:
    SymMatrix() = default;
    explicit SymMatrix(std::size_t dim) : dim_{dim}, packed_(dim * (dim + 1) / 2, 0.0) {}

    static SymMatrix diagonal(std::span<const double> diag)
    {
        SymMatrix m{diag.size()};
        for (std::size_t i = 0; i < diag.size(); ++i) m.set(i, i, diag[i]);
        return m;
    }

    /// Builds from a full row-major square matrix; throws if it is not symmetric.
    static SymMatrix from_rows(const std::vector<std::vector<double>>& rows)
    {
        SymMatrix m{rows.size()};
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != rows.size())
                throw std::invalid_argument{"SymMatrix::from_rows: matrix is not square"};
            for (std::size_t j = 0; j <= i; ++j) {
                if (rows[i][j] != rows[j][i])
                    throw std::invalid_argument{"SymMatrix::from_rows: matrix is not symmetric"};
                m.set(i, j, rows[i][j]);
            }
        }
        return m;
    }

    /// Entries i.i.d. N(0, 1) on and below the diagonal.
    static SymMatrix random_gaussian(RngStream& rng, std::size_t dim)
    {
        SymMatrix m{dim};
        for (auto& x : m.packed_) x = rng.normal();
        return m;
    }

    std::size_t dim() const noexcept { return dim_; }

    double operator()(std::size_t i, std::size_t j) const { return packed_[index(i, j)]; }
    void set(std::size_t i, std::size_t j, double value) { packed_[index(i, j)] = value; }

    bool finite() const { return all_finite(packed_); }

    /// y = A x
    void apply(std::span<const double> x, std::span<double> y) const
    {
        assert(x.size() == dim_ && y.size() == dim_);
        std::fill(y.begin(), y.end(), 0.0);
        std::size_t k = 0;
        for (std::size_t i = 0; i < dim_; ++i) {
            for (std::size_t j = 0; j < i; ++j, ++k) {
                y[i] += packed_[k] * x[j];
                y[j] += packed_[k] * x[i];
            }
            y[i] += packed_[k++] * x[i];
        }
    }

    FlatVector apply(std::span<const double> x) const
    {
        FlatVector y(dim_);
        apply(x, y);
        return y;
    }

    Eigen::MatrixXd to_dense() const
    {
        Eigen::MatrixXd d(dim_, dim_);
        for (std::size_t i = 0; i < dim_; ++i)
            for (std::size_t j = 0; j <= i; ++j) d(i, j) = d(j, i) = (*this)(i, j);
        return d;
    }

private:
    static std::size_t index(std::size_t i, std::size_t j)
    {
        if (i < j) std::swap(i, j);
        return i * (i + 1) / 2 + j;
    }

    std::size_t dim_ = 0;
    std::vector<double> packed_;
};

struct DenseEig {
    double value;
    FlatVector vector;
};

inline constexpr std::size_t kDenseEigMaxDim = 512;

/// Algebraically largest eigenpair by full dense decomposition. Test oracle.
inline DenseEig dense_top_eig(const SymMatrix& a)
{
    if (a.dim() == 0 || a.dim() > kDenseEigMaxDim)
        throw std::invalid_argument{"dense_top_eig: dimension out of range"};
    if (!a.finite()) throw std::domain_error{"dense_top_eig: non-finite matrix entry"};
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver{a.to_dense()};
    if (solver.info() != Eigen::Success) throw std::runtime_error{"dense_top_eig: decomposition failed"};
    const auto last = static_cast<Eigen::Index>(a.dim()) - 1;
    DenseEig out{solver.eigenvalues()(last), FlatVector(a.dim())};
    Eigen::VectorXd v = solver.eigenvectors().col(last).normalized();
    std::copy(v.data(), v.data() + v.size(), out.vector.begin());
    return out;
}

}  // namespace warmup
