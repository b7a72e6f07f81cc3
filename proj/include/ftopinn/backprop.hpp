#pragma once

#include "ftopinn/mlp.hpp"

namespace ftopinn {

/// Layer outputs kept for the backward pass; h[0] is the input block and
/// h[l + 1] the output of layer l (columns are points).
struct ForwardTape {
    std::vector<Matrix> h;
    [[nodiscard]] const Matrix& output() const { return h.back(); }
};

struct LayerGrad {
    Matrix weight;
    Vector bias;
};

/// Like forward_values, but records every layer output. Hidden layers are
/// tanh, the last layer is affine.
inline ForwardTape forward_tape(std::span<const DenseLayer> layers, const Matrix& X) {
    ForwardTape tape;
    tape.h.reserve(layers.size() + 1);
    tape.h.push_back(X);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        Matrix z = layers[l].weight * tape.h.back();
        z.colwise() += layers[l].bias;
        if (l + 1 < layers.size()) {
            z = z.array().tanh().matrix();
        }
        tape.h.push_back(std::move(z));
    }
    return tape;
}

/// Gradients of sum(dOut .* output) with respect to every weight and bias.
/// When dX is given it receives the gradient with respect to the inputs.
inline std::vector<LayerGrad> backward(std::span<const DenseLayer> layers, const ForwardTape& tape,
                                       const Matrix& dOut, Matrix* dX = nullptr) {
    std::vector<LayerGrad> grads(layers.size());
    Matrix delta = dOut;
    for (std::size_t l = layers.size(); l-- > 0;) {
        if (l + 1 < layers.size()) {
            delta.array() *= 1.0 - tape.h[l + 1].array().square();
        }
        grads[l].weight.noalias() = delta * tape.h[l].transpose();
        grads[l].bias = delta.rowwise().sum();
        if (l > 0 || dX != nullptr) {
            Matrix next = layers[l].weight.transpose() * delta;
            delta = std::move(next);
        }
    }
    if (dX != nullptr) {
        *dX = std::move(delta);
    }
    return grads;
}

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void validate() const {
        if (!(lr > 0.0) || !(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(eps > 0.0)) {
            throw ConfigError("Adam needs lr > 0, betas in [0,1) and eps > 0");
        }
    }
};

using ParamRef = Eigen::Map<Vector>;
using GradRef = Eigen::Map<const Vector>;

/// Flat view of a dense Eigen matrix or vector.
template <typename Dense>
ParamRef flat(Dense& m) {
    return ParamRef(m.data(), m.size());
}

template <typename Dense>
GradRef flat_grad(const Dense& m) {
    return GradRef(m.data(), m.size());
}

/// Adam over a fixed list of tensors. The tensor list must keep its shapes
/// between calls; state is created on the first step.
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

    void step(const std::vector<ParamRef>& params, const std::vector<GradRef>& grads) {
        if (params.size() != grads.size()) {
            throw DimensionError("Adam: parameter and gradient lists differ in length");
        }
        if (m_.empty()) {
            for (const auto& p : params) {
                m_.push_back(Vector::Zero(p.size()));
                v_.push_back(Vector::Zero(p.size()));
            }
        }
        if (m_.size() != params.size()) {
            throw DimensionError("Adam: parameter list changed between steps");
        }
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t k = 0; k < params.size(); ++k) {
            const auto& g = grads[k];
            if (g.size() != params[k].size() || g.size() != m_[k].size()) {
                throw DimensionError("Adam: gradient " + std::to_string(k) + " has length " +
                                     std::to_string(g.size()));
            }
            m_[k] = cfg_.beta1 * m_[k] + (1.0 - cfg_.beta1) * g;
            v_[k] = cfg_.beta2 * v_[k] + (1.0 - cfg_.beta2) * g.cwiseAbs2();
            auto p = params[k];
            p.array() -= cfg_.lr * (m_[k].array() / c1) / ((v_[k].array() / c2).sqrt() + cfg_.eps);
        }
    }

    [[nodiscard]] long steps() const { return t_; }
    void set_lr(double lr) { cfg_.lr = lr; }

private:
    AdamConfig cfg_;
    std::vector<Vector> m_;
    std::vector<Vector> v_;
    long t_ = 0;
};

} // namespace ftopinn
