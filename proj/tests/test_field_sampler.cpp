#include "ftopinn/field_sampler.hpp"

#include <gtest/gtest.h>

using namespace ftopinn;

TEST(Kernel, Values) {
    EXPECT_DOUBLE_EQ(rbf_kernel(0.3, 0.3, 0.05), 1.0);
    EXPECT_NEAR(rbf_kernel(0.0, 0.2, 0.2), std::exp(-0.5), 1e-15);
    EXPECT_NEAR(rbf_kernel(0.0, 0.2, 0.2), 0.6065306597, 1e-10);
}

TEST(Coefficient, ShiftArithmetic) {
    const Vector a = to_coefficient(Eigen::Vector3d(0.5, -0.5, 0.0));
    EXPECT_EQ(a, Eigen::Vector3d(2.0, 1.0, 1.5));
    EXPECT_EQ(to_coefficient(Vector::Constant(5, 3.2)), Vector::Ones(5));
    const auto v = sample_rbf_grf(RbfGrf{0.1, 100}, 3, 5u);
    for (const auto& s : v) EXPECT_EQ(to_coefficient(s).minCoeff(), 1.0);
}

TEST(RbfGrf, CovarianceMatchesKernel) {
    const RbfGrf spec{0.1, 50};
    const int n = 20000;
    const auto samples = sample_rbf_grf(spec, n, 42u);
    const Vector x = unit_grid(spec.sensors);
    const std::vector<std::pair<int, int>> pairs{{0, 0}, {10, 12}, {20, 25}, {3, 40}, {30, 31}};
    for (auto [i, j] : pairs) {
        double c = 0.0;
        for (const auto& s : samples) c += s[i] * s[j];
        c /= n;
        const double k = rbf_kernel(x[i], x[j], spec.length_scale);
        const double se = std::sqrt((1.0 + k * k) / n);
        EXPECT_LT(std::abs(c - k), 3.0 * se) << i << "," << j;
    }
}

TEST(RbfGrf, DeterministicAndValidated) {
    const auto a = sample_rbf_grf(RbfGrf{0.2, 100}, 2, 7u);
    const auto b = sample_rbf_grf(RbfGrf{0.2, 100}, 2, 7u);
    EXPECT_EQ(a[1], b[1]);
    EXPECT_THROW(sample_rbf_grf(RbfGrf{0.0, 100}, 1, 1u), ConfigError);
}

TEST(RbfGrf, LargerLengthScaleIsSmoother) {
    double previous = std::numeric_limits<double>::infinity();
    for (double beta : {0.025, 0.05, 0.1, 0.2}) {
        const auto samples = sample_rbf_grf(RbfGrf{beta, 100}, 1000, 3u);
        double msd = 0.0;
        for (const auto& s : samples) msd += (s.tail(99) - s.head(99)).squaredNorm() / 99.0;
        msd /= 1000.0;
        EXPECT_LT(msd, previous) << beta;
        previous = msd;
    }
}

TEST(GridFunction, InterpolatesNodesAndSmoothData) {
    const Vector x = unit_grid(101);
    const GridFunction f(x, x.unaryExpr([](double s) { return std::sin(3 * s); }));
    EXPECT_NEAR(f(x[37]), std::sin(3 * x[37]), 1e-14);
    EXPECT_NEAR(f(0.12345), std::sin(3 * 0.12345), 1e-6);
    EXPECT_THROW(GridFunction(unit_grid(3), Vector::Zero(3)), DimensionError);
}

TEST(PeriodicGrf, EndpointsAndModeVariance) {
    const PeriodicGrf spec;
    EXPECT_NEAR(spec.mode_variance(0), 625.0 * std::pow(5.0, -8.0), 1e-18);
    const auto samples = sample_periodic_grf(spec, 10, 3u);
    for (const auto& u : samples) {
        EXPECT_EQ(u(0.0), u(1.0));
        EXPECT_NEAR(u.derivative(0.0), u.derivative(1.0), 1e-12);
    }
}

TEST(PeriodicGrf, PointwiseVarianceMatchesSeries) {
    const PeriodicGrf spec;
    const int n = 20000;
    const auto samples = sample_periodic_grf(spec, n, 11u);
    double m2 = 0.0;
    for (const auto& u : samples) m2 += u(0.5) * u(0.5);
    m2 /= n;
    const double var = spec.pointwise_variance();
    EXPECT_LT(std::abs(m2 - var), 3.0 * var * std::sqrt(2.0 / n));
}

TEST(PeriodicGrf, DerivativeMatchesDifferences) {
    const auto u = sample_periodic_grf(PeriodicGrf{}, 1, 2u).front();
    const double h = 1e-6;
    EXPECT_NEAR(u.derivative(0.3), (u(0.3 + h) - u(0.3 - h)) / (2 * h), 1e-7);
    EXPECT_THROW(sample_periodic_grf(PeriodicGrf{25, 5, 0.5}, 1, 1u), ConfigError);
}
