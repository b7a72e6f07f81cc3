#pragma once

#include "ftopinn/basis.hpp"

#include <complex>
#include <optional>
#include <tuple>

namespace ftopinn::test {

inline std::vector<Point> random_points(std::size_t n, Rng& rng, double lo = 0.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<Point> pts;
    for (std::size_t i = 0; i < n; ++i) pts.push_back(make_point(u(rng), u(rng)));
    return pts;
}

inline MlpSpec random_mlp(const std::vector<Eigen::Index>& widths, Rng& rng, double scale = 1.0) {
    std::normal_distribution<double> g(0.0, 1.0);
    MlpSpec net;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        DenseLayer layer;
        const double s = scale / std::sqrt(static_cast<double>(widths[l]));
        layer.weight = Matrix::NullaryExpr(widths[l + 1], widths[l], [&] { return s * g(rng); });
        layer.bias = Vector::NullaryExpr(widths[l + 1], [&] { return 0.5 * g(rng); });
        net.layers.push_back(std::move(layer));
    }
    return net;
}

using cd = std::complex<double>;
using CVector = Eigen::VectorXcd;

/// Plain per-point network evaluation over complex inputs, written without
/// any of the library's batched jet machinery.
inline CVector ref_forward(const MlpSpec& net, CVector h, bool activate_last) {
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        CVector z = net.layers[l].weight.cast<cd>() * h + net.layers[l].bias.cast<cd>();
        if (l + 1 < net.layers.size() || activate_last) {
            for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = std::tanh(z[i]);
        }
        h = std::move(z);
    }
    return h;
}

/// Member values at a complex point, or nullopt for kinds without a complex extension.
inline std::optional<CVector> ref_values(const BasisSet& basis, const CVector& x) {
    return std::visit(
        [&](const auto& k) -> std::optional<CVector> {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, basis_kind::Trunk>) {
                return ref_forward(k.net, x, false);
            } else if constexpr (std::is_same_v<K, basis_kind::RandomFeature>) {
                return ref_forward(k.net, x, true);
            } else if constexpr (std::is_same_v<K, basis_kind::LoraTrunk>) {
                MlpSpec m = k.base;
                for (std::size_t a = 0; a < k.lora.layers.size(); ++a) {
                    auto& layer = m.layers[k.lora.layers[a]];
                    layer.weight += k.lora.adapters[a].B * k.lora.adapters[a].A;
                    layer.bias = k.lora.adapters[a].bias;
                }
                return ref_forward(m, x, false);
            } else if constexpr (std::is_same_v<K, basis_kind::ScaledUnion>) {
                const auto I = k.net.output_dim();
                CVector out(I * static_cast<Eigen::Index>(k.scales.values.size()));
                for (std::size_t j = 0; j < k.scales.values.size(); ++j) {
                    out.segment(static_cast<Eigen::Index>(j) * I, I) =
                        ref_forward(k.net, k.scales.values[j] * x, false);
                }
                return out;
            } else if constexpr (std::is_same_v<K, basis_kind::PascalPoly>) {
                CVector out(basis.size());
                Eigen::Index c = 0;
                for (int deg = 0; deg <= k.max_degree; ++deg) {
                    for (int a = deg; a >= 0; --a) {
                        out[c++] = std::pow(x[0], a) * std::pow(x[1], deg - a);
                    }
                }
                return out;
            } else if constexpr (std::is_same_v<K, basis_kind::Concat>) {
                CVector out(basis.size());
                Eigen::Index c = 0;
                for (const auto& part : k.parts) {
                    auto v = ref_values(*part, x);
                    if (!v) return std::nullopt;
                    out.segment(c, part->size()) = *v;
                    c += part->size();
                }
                return out;
            } else {
                return std::nullopt;
            }
        },
        basis.kind());
}

/// Gradient by complex step; nullopt when the basis has no complex extension.
inline std::optional<Matrix> complex_step_gradient(const BasisSet& basis, const Point& x) {
    const CVector xc = x.cast<cd>();
    if (!ref_values(basis, xc)) {
        return std::nullopt;
    }
    const double h = 1e-20;
    Matrix g(basis.size(), basis.input_dim());
    for (Eigen::Index k = 0; k < basis.input_dim(); ++k) {
        CVector xp = xc;
        xp[k] += cd(0.0, h);
        g.col(k) = ref_values(basis, xp)->imag() / h;
    }
    return g;
}

/// Value-only oracle: Richardson-extrapolated central differences (h, h/2).
inline std::pair<Matrix, std::vector<Matrix>> value_difference_jets(const BasisSet& basis, const Point& x,
                                                                    double h = 1e-3) {
    const auto d = basis.input_dim();
    auto f = [&](const Point& p) -> Vector {
        const std::array<Point, 1> one{p};
        return basis.eval_values(one).row(0).transpose();
    };
    auto shifted = [&](Eigen::Index k, double a, Eigen::Index l, double b) {
        Point p = x;
        p[k] += a;
        p[l] += b;
        return f(p);
    };
    const Vector f0 = f(x);
    Matrix g(basis.size(), d);
    std::vector<Matrix> H(static_cast<std::size_t>(d), Matrix(basis.size(), d));
    for (Eigen::Index k = 0; k < d; ++k) {
        auto d1 = [&](double s) -> Vector { return (shifted(k, s, k, 0) - shifted(k, -s, k, 0)) / (2 * s); };
        g.col(k) = (4.0 * d1(h / 2) - d1(h)) / 3.0;
        for (Eigen::Index l = 0; l < d; ++l) {
            auto d2 = [&](double s) -> Vector {
                if (k == l) return (shifted(k, s, k, 0) - 2.0 * f0 + shifted(k, -s, k, 0)) / (s * s);
                return (shifted(k, s, l, s) - shifted(k, s, l, -s) - shifted(k, -s, l, s) + shifted(k, -s, l, -s)) /
                       (4 * s * s);
            };
            H[static_cast<std::size_t>(l)].col(k) = (4.0 * d2(h / 2) - d2(h)) / 3.0;
        }
    }
    return {g, H};
}

struct JetCheck {
    double grad_error = 0.0;
    double hess_error = 0.0;
};

/// Max relative deviation of the jet gradients and Hessians from an
/// independent oracle: complex-step gradients with central differences of
/// those for the Hessian, or value differences for kinds without a complex
/// extension. Entries are compared relative to max(|ref|, 1e-3 * largest
/// |ref| of that component).
inline JetCheck check_jets(const BasisSet& basis, const Point& x) {
    const auto d = basis.input_dim();
    const auto I = basis.size();
    const std::array<Point, 1> one{x};
    const JetBatch jb = basis.eval_batch(one);

    Matrix g;
    std::vector<Matrix> H(static_cast<std::size_t>(d));
    if (auto cs = complex_step_gradient(basis, x)) {
        g = *cs;
        const double h = 1e-5;
        for (Eigen::Index l = 0; l < d; ++l) {
            Point xp = x, xm = x;
            xp[l] += h;
            xm[l] -= h;
            H[static_cast<std::size_t>(l)] = (*complex_step_gradient(basis, xp) - *complex_step_gradient(basis, xm)) / (2 * h);
        }
    } else {
        std::tie(g, H) = value_difference_jets(basis, x);
    }

    JetCheck out;
    auto rel = [](double got, double ref, double scale) {
        return std::abs(got - ref) / std::max({std::abs(ref), 1e-3 * scale, 1e-12});
    };
    for (Eigen::Index k = 0; k < d; ++k) {
        const double scale = g.col(k).cwiseAbs().maxCoeff();
        for (Eigen::Index i = 0; i < I; ++i) {
            out.grad_error = std::max(out.grad_error, rel(jb.grad[static_cast<std::size_t>(k)](0, i), g(i, k), scale));
        }
    }
    for (Eigen::Index l = 0; l < d; ++l) {
        const auto& Hl = H[static_cast<std::size_t>(l)];
        for (Eigen::Index k = 0; k < d; ++k) {
            const double scale = Hl.col(k).cwiseAbs().maxCoeff();
            for (Eigen::Index i = 0; i < I; ++i) {
                out.hess_error = std::max(out.hess_error, rel(jb.hess_at(k, l)(0, i), Hl(i, k), scale));
            }
        }
    }
    return out;
}

} // namespace ftopinn::test
