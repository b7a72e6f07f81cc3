#pragma once

#include "ftopinn/common.hpp"

#include <span>

namespace ftopinn {

using Grad = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, 3, 1>;
using Hess = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, 3, 3>;

/// Value, gradient and Hessian of one scalar basis function at one point.
struct Jet2 {
    double value = 0.0;
    Grad grad;
    Hess hess;

    Jet2() = default;
    explicit Jet2(Eigen::Index dim) : grad(Grad::Zero(dim)), hess(Hess::Zero(dim, dim)) {}

    [[nodiscard]] Eigen::Index dim() const { return grad.size(); }

    [[nodiscard]] double laplacian() const { return hess.trace(); }
};

/// Number of packed upper-triangular Hessian entries for input dimension d.
constexpr Eigen::Index packed_hess_size(Eigen::Index d) { return d * (d + 1) / 2; }

/// Index of H(k, l) in packed upper-triangular storage (row-major over k <= l).
constexpr Eigen::Index packed_hess_index(Eigen::Index d, Eigen::Index k, Eigen::Index l) {
    if (k > l) {
        const auto t = k;
        k = l;
        l = t;
    }
    return k * d - k * (k - 1) / 2 + (l - k);
}

/// Jets of I basis functions at P points, stored component-wise as P x I
/// matrices. Row p, column i describes basis member i at point p.
struct JetBatch {
    Matrix value;
    std::vector<Matrix> grad;  // d entries
    std::vector<Matrix> hess;  // packed upper triangle, d(d+1)/2 entries

    JetBatch() = default;
    JetBatch(Eigen::Index points, Eigen::Index members, Eigen::Index dim)
        : value(Matrix::Zero(points, members)),
          grad(static_cast<std::size_t>(dim), Matrix::Zero(points, members)),
          hess(static_cast<std::size_t>(packed_hess_size(dim)), Matrix::Zero(points, members)) {}

    [[nodiscard]] Eigen::Index points() const { return value.rows(); }
    [[nodiscard]] Eigen::Index members() const { return value.cols(); }
    [[nodiscard]] Eigen::Index dim() const { return static_cast<Eigen::Index>(grad.size()); }

    [[nodiscard]] Matrix& hess_at(Eigen::Index k, Eigen::Index l) {
        return hess[static_cast<std::size_t>(packed_hess_index(dim(), k, l))];
    }
    [[nodiscard]] const Matrix& hess_at(Eigen::Index k, Eigen::Index l) const {
        return hess[static_cast<std::size_t>(packed_hess_index(dim(), k, l))];
    }

    [[nodiscard]] Jet2 jet(Eigen::Index p, Eigen::Index i) const {
        const auto d = dim();
        Jet2 j(d);
        j.value = value(p, i);
        for (Eigen::Index k = 0; k < d; ++k) {
            j.grad[k] = grad[static_cast<std::size_t>(k)](p, i);
            for (Eigen::Index l = k; l < d; ++l) {
                const double h = hess_at(k, l)(p, i);
                j.hess(k, l) = h;
                j.hess(l, k) = h;
            }
        }
        return j;
    }

    /// Fills `out` with the jets of every member at point p (reuses capacity).
    void jets_at(Eigen::Index p, std::vector<Jet2>& out) const {
        out.resize(static_cast<std::size_t>(members()));
        for (Eigen::Index i = 0; i < members(); ++i) {
            out[static_cast<std::size_t>(i)] = jet(p, i);
        }
    }

    /// Copies rows [0, src.points()) of src into rows starting at `offset`
    /// and columns starting at `col`.
    void place(const JetBatch& src, Eigen::Index offset, Eigen::Index col = 0) {
        const auto P = src.points();
        const auto I = src.members();
        value.block(offset, col, P, I) = src.value;
        for (std::size_t k = 0; k < grad.size(); ++k) {
            grad[k].block(offset, col, P, I) = src.grad[k];
        }
        for (std::size_t k = 0; k < hess.size(); ++k) {
            hess[k].block(offset, col, P, I) = src.hess[k];
        }
    }
};

} // namespace ftopinn
