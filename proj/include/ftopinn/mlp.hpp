#pragma once

#include "ftopinn/common.hpp"
#include "ftopinn/jet.hpp"

#include <span>
#include <string>

namespace ftopinn {

enum class Activation { tanh };

inline std::string to_string(Activation a) {
    switch (a) {
    case Activation::tanh:
        return "tanh";
    }
    return "unknown";
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "tanh") {
        return Activation::tanh;
    }
    throw ConfigError("unsupported activation '" + s + "' (only tanh is implemented)");
}

struct DenseLayer {
    Matrix weight;  // out x in
    Vector bias;    // out

    [[nodiscard]] Eigen::Index in_dim() const { return weight.cols(); }
    [[nodiscard]] Eigen::Index out_dim() const { return weight.rows(); }
};

/// Frozen feedforward network: psi_l = sigma(W_l psi_{l-1} + b_l) for the
/// hidden layers and a purely affine last layer.
struct MlpSpec {
    std::vector<DenseLayer> layers;
    Activation activation = Activation::tanh;

    [[nodiscard]] Eigen::Index input_dim() const {
        return layers.empty() ? 0 : layers.front().in_dim();
    }
    [[nodiscard]] Eigen::Index output_dim() const {
        return layers.empty() ? 0 : layers.back().out_dim();
    }
    [[nodiscard]] std::size_t depth() const { return layers.size(); }

    /// Throws DimensionError on a broken layer chain and NumericalError on
    /// non-finite entries; both name the offending layer.
    void validate() const {
        if (layers.empty()) {
            throw DimensionError("MLP has no layers");
        }
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const auto& layer = layers[l];
            if (layer.bias.size() != layer.out_dim()) {
                throw DimensionError("layer " + std::to_string(l) + ": bias length " +
                                     std::to_string(layer.bias.size()) + " != weight rows " +
                                     std::to_string(layer.out_dim()));
            }
            if (l > 0 && layer.in_dim() != layers[l - 1].out_dim()) {
                throw DimensionError("layer " + std::to_string(l) + ": input width " +
                                     std::to_string(layer.in_dim()) + " != previous output " +
                                     std::to_string(layers[l - 1].out_dim()));
            }
            if (layer.in_dim() == 0 || layer.out_dim() == 0) {
                throw DimensionError("layer " + std::to_string(l) + " has an empty dimension");
            }
            if (!layer.weight.allFinite() || !layer.bias.allFinite()) {
                throw NumericalError("layer " + std::to_string(l) + " contains a non-finite entry");
            }
        }
    }
};

namespace detail {

inline void check_input_dim(Eigen::Index expected, Eigen::Index got) {
    if (expected != got) {
        throw DimensionError("point dimension " + std::to_string(got) +
                             " does not match network input dimension " + std::to_string(expected));
    }
}

/// Value-only forward pass; columns of X are points. When activate_last is
/// set the last layer is also passed through the activation.
inline Matrix forward_values(std::span<const DenseLayer> layers, const Matrix& X, bool activate_last) {
    Matrix h = X;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        Matrix z = layers[l].weight * h;
        z.colwise() += layers[l].bias;
        if (l + 1 < layers.size() || activate_last) {
            h = z.array().tanh();
        } else {
            h = std::move(z);
        }
    }
    return h;
}

/// Second-order forward jet propagation. Layer state is a stacked matrix of
/// width C*P with component blocks [value | d/dx_k | d2/dx_k dx_l (k<=l)].
inline JetBatch forward_jets(std::span<const DenseLayer> layers, std::span<const Point> points,
                             bool activate_last, double input_scale = 1.0) {
    const auto P = static_cast<Eigen::Index>(points.size());
    const Eigen::Index d = layers.front().in_dim();
    const Eigen::Index nh = packed_hess_size(d);
    const Eigen::Index C = 1 + d + nh;

    Matrix S = Matrix::Zero(d, C * P);
    for (Eigen::Index p = 0; p < P; ++p) {
        check_input_dim(d, points[static_cast<std::size_t>(p)].size());
        S.col(p) = input_scale * points[static_cast<std::size_t>(p)];
    }
    for (Eigen::Index k = 0; k < d; ++k) {
        S.block(k, (1 + k) * P, 1, P).setConstant(input_scale);
    }

    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& layer = layers[l];
        Matrix Z = layer.weight * S;
        Z.leftCols(P).colwise() += layer.bias;
        if (l + 1 < layers.size() || activate_last) {
            const Eigen::ArrayXXd t = Z.leftCols(P).array().tanh();
            const Eigen::ArrayXXd s1 = 1.0 - t.square();
            const Eigen::ArrayXXd s2 = -2.0 * t * s1;
            for (Eigen::Index k = 0; k < d; ++k) {
                for (Eigen::Index m = k; m < d; ++m) {
                    const Eigen::Index hb = 1 + d + packed_hess_index(d, k, m);
                    Z.middleCols(hb * P, P).array() =
                        s1 * Z.middleCols(hb * P, P).array() +
                        s2 * Z.middleCols((1 + k) * P, P).array() * Z.middleCols((1 + m) * P, P).array();
                }
            }
            for (Eigen::Index k = 0; k < d; ++k) {
                Z.middleCols((1 + k) * P, P).array() *= s1;
            }
            Z.leftCols(P) = t.matrix();
        }
        S = std::move(Z);
    }

    const Eigen::Index I = S.rows();
    JetBatch out(P, I, d);
    out.value = S.leftCols(P).transpose();
    for (Eigen::Index k = 0; k < d; ++k) {
        out.grad[static_cast<std::size_t>(k)] = S.middleCols((1 + k) * P, P).transpose();
    }
    for (Eigen::Index h = 0; h < nh; ++h) {
        out.hess[static_cast<std::size_t>(h)] = S.middleCols((1 + d + h) * P, P).transpose();
    }
    return out;
}

} // namespace detail

/// Network outputs at the given points, one row per point.
inline Matrix evaluate(const MlpSpec& net, std::span<const Point> points) {
    Matrix X(net.input_dim(), static_cast<Eigen::Index>(points.size()));
    for (std::size_t p = 0; p < points.size(); ++p) {
        detail::check_input_dim(net.input_dim(), points[p].size());
        X.col(static_cast<Eigen::Index>(p)) = points[p];
    }
    return detail::forward_values(net.layers, X, false).transpose();
}

inline Vector evaluate(const MlpSpec& net, const Vector& x) {
    detail::check_input_dim(net.input_dim(), x.size());
    return detail::forward_values(net.layers, x, false);
}

/// Forward-mode second-order jets of every network output.
inline JetBatch evaluate_jets(const MlpSpec& net, std::span<const Point> points) {
    return detail::forward_jets(net.layers, points, false);
}

} // namespace ftopinn
