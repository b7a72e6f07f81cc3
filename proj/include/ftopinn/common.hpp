#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace ftopinn {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Coordinates of one point in the (space-)time domain. Time, when present,
/// is the last coordinate. Capacity is fixed at three so points never allocate.
using Point = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, 3, 1>;

inline Point make_point(double a, double b) {
    Point p(2);
    p << a, b;
    return p;
}

inline constexpr double kPi = 3.14159265358979323846;

// Error categories map onto CLI exit codes: ConfigError -> 2, NumericalError -> 3.

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class DimensionError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

class NumericalError : public Error {
public:
    using Error::Error;
};

using Rng = std::mt19937_64;

inline bool all_finite(const Eigen::Ref<const Matrix>& m) {
    return m.allFinite();
}

inline std::string dims_string(Eigen::Index rows, Eigen::Index cols) {
    return std::to_string(rows) + "x" + std::to_string(cols);
}

} // namespace ftopinn
