#pragma once

#include "ftopinn/mlp.hpp"

#include <algorithm>

namespace ftopinn {

/// Low-rank update of one linear layer: W + B*A with the bias replaced by `bias`.
struct LoraAdapter {
    Matrix B;     // out x r
    Matrix A;     // r x in
    Vector bias;  // out, initialised to the pretrained bias
};

struct LoraParams {
    std::vector<std::size_t> layers;  // adapted layer indices, ascending
    Eigen::Index rank = 0;              // nominal rank; per-layer rank is min(rank, d_l, d_{l-1})
    std::vector<LoraAdapter> adapters;  // parallel to `layers`

    void validate(const MlpSpec& net) const {
        if (layers.size() != adapters.size()) {
            throw ConfigError("LoRA layer list and adapter list differ in length");
        }
        for (std::size_t k = 0; k < layers.size(); ++k) {
            const auto l = layers[k];
            if (l >= net.layers.size()) {
                throw DimensionError("LoRA layer index " + std::to_string(l) + " out of range");
            }
            const auto& w = net.layers[l].weight;
            const auto& ad = adapters[k];
            const auto r = std::min({rank, w.rows(), w.cols()});
            if (ad.B.rows() != w.rows() || ad.B.cols() != r || ad.A.rows() != r ||
                ad.A.cols() != w.cols() || ad.bias.size() != w.rows()) {
                throw DimensionError("LoRA adapter for layer " + std::to_string(l) +
                                     " does not match layer shape " + dims_string(w.rows(), w.cols()));
            }
        }
    }
};

/// B = 0, A ~ N(0, 1/r), bias = pretrained bias, for layers [0, layer_count).
/// A layer with min(d_l, d_{l-1}) <= r gets rank min(d_l, d_{l-1}) instead,
/// which already spans every update of that layer.
inline LoraParams init_lora(const MlpSpec& net, std::size_t layer_count, Eigen::Index rank, Rng& rng) {
    if (rank < 1) {
        throw ConfigError("LoRA rank must be >= 1");
    }
    if (layer_count < 1 || layer_count > net.layers.size()) {
        throw ConfigError("LoRA layer count must be in [1, " + std::to_string(net.layers.size()) + "]");
    }
    LoraParams p;
    p.rank = rank;
    std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(static_cast<double>(rank)));
    for (std::size_t l = 0; l < layer_count; ++l) {
        const auto& layer = net.layers[l];
        const auto r = std::min({rank, layer.out_dim(), layer.in_dim()});
        LoraAdapter ad;
        ad.B = Matrix::Zero(layer.out_dim(), r);
        ad.A = Matrix::NullaryExpr(r, layer.in_dim(), [&] { return gauss(rng); });
        ad.bias = layer.bias;
        p.layers.push_back(l);
        p.adapters.push_back(std::move(ad));
    }
    return p;
}

/// The network with every adapted layer replaced by (W + BA, bias).
inline MlpSpec merge_lora(const MlpSpec& net, const LoraParams& lora) {
    lora.validate(net);
    MlpSpec out = net;
    for (std::size_t k = 0; k < lora.layers.size(); ++k) {
        auto& layer = out.layers[lora.layers[k]];
        const auto& ad = lora.adapters[k];
        layer.weight = net.layers[lora.layers[k]].weight + ad.B * ad.A;
        layer.bias = ad.bias;
    }
    return out;
}

} // namespace ftopinn
