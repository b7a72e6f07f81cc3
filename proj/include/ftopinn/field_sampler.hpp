#pragma once

#include "ftopinn/common.hpp"

#include <boost/math/interpolators/cardinal_cubic_b_spline.hpp>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <memory>

namespace ftopinn {

/// Mean-zero GRF on [0,1] with kernel exp(-|x - y|^2 / (2 beta^2)), sampled
/// on `sensors` equispaced points.
struct RbfGrf {
    double length_scale = 0.2;
    int sensors = 100;

    void validate() const {
        if (!(length_scale > 0.0) || !std::isfinite(length_scale)) {
            throw ConfigError("GRF length scale must be positive");
        }
        if (sensors < 4) {
            throw ConfigError("GRF needs at least 4 sensors");
        }
    }
};

/// Mean-zero GRF on the unit torus with covariance sigma^2 (-Laplace + tau^2)^(-s).
struct PeriodicGrf {
    double sigma = 25.0;
    double tau = 5.0;
    double s = 4.0;
    int modes = 128;
    int grid = 101;

    void validate() const {
        if (!(sigma > 0.0) || !(tau > 0.0)) {
            throw ConfigError("periodic GRF needs sigma > 0 and tau > 0");
        }
        if (!(s > 0.5)) {
            throw ConfigError("periodic GRF exponent s must exceed 1/2");
        }
        if (modes < 1 || grid < 2) {
            throw ConfigError("periodic GRF needs >= 1 mode and >= 2 grid points");
        }
    }

    /// Variance of the coefficient of each Fourier mode with frequency 2 pi k.
    [[nodiscard]] double mode_variance(int k) const {
        const double w = 2.0 * kPi * k;
        return sigma * sigma * std::pow(w * w + tau * tau, -s);
    }

    /// Pointwise variance of the truncated expansion (the same at every x).
    [[nodiscard]] double pointwise_variance() const {
        double v = mode_variance(0);
        for (int k = 1; k <= modes; ++k) v += 2.0 * mode_variance(k);
        return v;
    }
};

inline double rbf_kernel(double x, double y, double beta) {
    const double d = x - y;
    return std::exp(-d * d / (2.0 * beta * beta));
}

inline Vector unit_grid(int n) {
    return Vector::LinSpaced(n, 0.0, 1.0);
}

/// Function known on an equispaced grid of [0,1], evaluated elsewhere by a
/// cubic B-spline interpolant.
class GridFunction {
public:
    GridFunction() = default;
    GridFunction(Vector grid, Vector values) : grid_(std::move(grid)), values_(std::move(values)) {
        if (grid_.size() != values_.size() || grid_.size() < 4) {
            throw DimensionError("grid function needs matching grid/values of length >= 4");
        }
        if (!values_.allFinite()) {
            throw NumericalError("grid function has non-finite values");
        }
        const double h = (grid_[grid_.size() - 1] - grid_[0]) / static_cast<double>(grid_.size() - 1);
        spline_ = std::make_shared<const Spline>(values_.data(), static_cast<std::size_t>(values_.size()),
                                                 grid_[0], h);
    }

    [[nodiscard]] const Vector& grid() const { return grid_; }
    [[nodiscard]] const Vector& values() const { return values_; }

    [[nodiscard]] double operator()(double x) const {
        const double lo = grid_[0];
        const double hi = grid_[grid_.size() - 1];
        return (*spline_)(std::clamp(x, lo, hi));
    }

private:
    using Spline = boost::math::interpolators::cardinal_cubic_b_spline<double>;
    Vector grid_;
    Vector values_;
    std::shared_ptr<const Spline> spline_;
};

/// Truncated Karhunen-Loeve expansion on the unit torus:
/// c0 + sum_k sqrt(2) (a_k cos(2 pi k x) + b_k sin(2 pi k x)).
class PeriodicFunction {
public:
    PeriodicFunction(double c0, Vector cos_coeffs, Vector sin_coeffs)
        : c0_(c0), a_(std::move(cos_coeffs)), b_(std::move(sin_coeffs)) {}

    [[nodiscard]] double operator()(double x) const {
        double u = c0_;
        for (Eigen::Index k = 1; k <= a_.size(); ++k) {
            // Reducing k*x mod 1 first makes u(0) and u(1) bit-identical.
            const double phase = 2.0 * kPi * std::fmod(static_cast<double>(k) * x, 1.0);
            u += std::sqrt(2.0) * (a_[k - 1] * std::cos(phase) + b_[k - 1] * std::sin(phase));
        }
        return u;
    }

    [[nodiscard]] double derivative(double x) const {
        double du = 0.0;
        for (Eigen::Index k = 1; k <= a_.size(); ++k) {
            const double w = 2.0 * kPi * static_cast<double>(k);
            const double phase = 2.0 * kPi * std::fmod(static_cast<double>(k) * x, 1.0);
            du += std::sqrt(2.0) * w * (b_[k - 1] * std::cos(phase) - a_[k - 1] * std::sin(phase));
        }
        return du;
    }

    [[nodiscard]] Vector on_grid(const Vector& grid) const {
        return grid.unaryExpr([this](double x) { return (*this)(x); });
    }

    [[nodiscard]] double mean() const { return c0_; }

private:
    double c0_;
    Vector a_;
    Vector b_;
};

/// Draws `count` samples v ~ N(0, K) on the sensor grid via Cholesky of
/// K + eps I, eps = 1e-10 escalated by 100x up to 1e-6 if needed.
inline std::vector<Vector> sample_rbf_grf(const RbfGrf& spec, int count, Rng& rng) {
    spec.validate();
    const Vector x = unit_grid(spec.sensors);
    const auto m = x.size();
    Matrix K(m, m);
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < m; ++j) K(i, j) = rbf_kernel(x[i], x[j], spec.length_scale);
    Eigen::LLT<Matrix> llt;
    bool ok = false;
    for (double jitter = 1e-10; jitter <= 1e-6 * 1.0001; jitter *= 100.0) {
        llt.compute(K + jitter * Matrix::Identity(m, m));
        if (llt.info() == Eigen::Success) {
            ok = true;
            break;
        }
    }
    if (!ok) {
        throw NumericalError("Cholesky of the GRF covariance failed even with jitter 1e-6");
    }
    const Matrix L = llt.matrixL();
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<Vector> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int n = 0; n < count; ++n) {
        const Vector z = Vector::NullaryExpr(m, [&] { return g(rng); });
        out.push_back(L * z);
    }
    return out;
}

inline std::vector<Vector> sample_rbf_grf(const RbfGrf& spec, int count, std::uint64_t seed) {
    Rng rng(seed);
    return sample_rbf_grf(spec, count, rng);
}

/// a(x_i) = v(x_i) - min_j v(x_j) + 1.
inline Vector to_coefficient(const Vector& v) {
    return (v.array() - v.minCoeff() + 1.0).matrix();
}

inline std::vector<PeriodicFunction> sample_periodic_grf(const PeriodicGrf& spec, int count, Rng& rng) {
    spec.validate();
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<PeriodicFunction> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int n = 0; n < count; ++n) {
        const double c0 = std::sqrt(spec.mode_variance(0)) * g(rng);
        Vector a(spec.modes), b(spec.modes);
        for (int k = 1; k <= spec.modes; ++k) {
            const double sd = std::sqrt(spec.mode_variance(k));
            a[k - 1] = sd * g(rng);
            b[k - 1] = sd * g(rng);
        }
        out.emplace_back(c0, std::move(a), std::move(b));
    }
    return out;
}

inline std::vector<PeriodicFunction> sample_periodic_grf(const PeriodicGrf& spec, int count, std::uint64_t seed) {
    Rng rng(seed);
    return sample_periodic_grf(spec, count, rng);
}

/// CSV with header x,f0,f1,... and one row per grid point.
inline void write_samples_csv(const std::string& path, const Vector& grid, const std::vector<Vector>& samples) {
    std::ofstream os(path);
    if (!os) {
        throw ConfigError("cannot write " + path);
    }
    os << "x";
    for (std::size_t s = 0; s < samples.size(); ++s) os << ",f" << s;
    os << '\n' << std::setprecision(17);
    for (Eigen::Index i = 0; i < grid.size(); ++i) {
        os << grid[i];
        for (const auto& v : samples) os << ',' << v[i];
        os << '\n';
    }
}

} // namespace ftopinn
