#pragma once

#include "ftopinn/jet.hpp"
#include "ftopinn/lora.hpp"
#include "ftopinn/mlp.hpp"

#include <algorithm>
#include <array>
#include <functional>
#include <memory>
#include <span>
#include <variant>

namespace ftopinn {

/// Positive input scales p_j for a scaled-union trunk expansion.
struct ScaleSet {
    std::vector<double> values;

    void validate() const {
        if (values.empty()) {
            throw ConfigError("scale set is empty");
        }
        int ones = 0;
        for (double p : values) {
            if (!(p > 0.0) || !std::isfinite(p)) {
                throw ConfigError("scale values must be positive and finite");
            }
            ones += (p == 1.0) ? 1 : 0;
        }
        if (ones != 1) {
            throw ConfigError("scale set must contain 1 exactly once");
        }
    }
};

class BasisSet;

namespace basis_kind {

struct Trunk {
    MlpSpec net;
};

/// Members t_i(p_j x), scale-major: index j*I + i.
struct ScaledUnion {
    MlpSpec net;
    ScaleSet scales;
};

/// Random-weight features: every layer, including the last, is activated.
struct RandomFeature {
    MlpSpec net;
};

/// 2-D monomials x1^a x2^b with a + b <= max_degree, graded-lex order.
struct PascalPoly {
    int max_degree = 0;
};

struct LoraTrunk {
    MlpSpec base;
    LoraParams lora;
    MlpSpec merged;
};

/// Caller-supplied members with analytic jets (manufactured solutions).
struct Explicit {
    Eigen::Index dim = 2;
    std::vector<std::function<Jet2(const Point&)>> members;
};

/// Column-wise concatenation of several bases over the same input space.
struct Concat {
    std::vector<std::shared_ptr<const BasisSet>> parts;
};

} // namespace basis_kind

namespace detail {

inline double ipow(double x, int n) {
    if (n < 0) {
        return 0.0;
    }
    double r = 1.0;
    for (int k = 0; k < n; ++k) {
        r *= x;
    }
    return r;
}

inline constexpr Eigen::Index kJetChunk = 512;

template <typename Fn>
JetBatch chunked(std::span<const Point> points, Eigen::Index members, Eigen::Index dim, Fn&& fn) {
    const auto P = static_cast<Eigen::Index>(points.size());
    if (P <= kJetChunk) {
        return fn(points);
    }
    JetBatch out(P, members, dim);
    for (Eigen::Index start = 0; start < P; start += kJetChunk) {
        const auto n = std::min(kJetChunk, P - start);
        out.place(fn(points.subspan(static_cast<std::size_t>(start), static_cast<std::size_t>(n))), start);
    }
    return out;
}

} // namespace detail

/// An ordered family of differentiable scalar functions t_1..t_I. Immutable
/// after construction; evaluation is pure.
class BasisSet {
public:
    using Kind = std::variant<basis_kind::Trunk, basis_kind::ScaledUnion, basis_kind::RandomFeature,
                              basis_kind::PascalPoly, basis_kind::LoraTrunk, basis_kind::Explicit,
                              basis_kind::Concat>;

    explicit BasisSet(Kind kind) : kind_(std::move(kind)) {
        std::visit([this](const auto& k) { init(k); }, kind_);
    }

    [[nodiscard]] Eigen::Index size() const { return size_; }
    [[nodiscard]] Eigen::Index input_dim() const { return dim_; }
    [[nodiscard]] const Kind& kind() const { return kind_; }
    [[nodiscard]] std::string kind_name() const {
        static constexpr const char* names[] = {"trunk",    "scaled_union", "random_feature", "pascal",
                                                "lora_trunk", "explicit",   "concat"};
        return names[kind_.index()];
    }

    /// Jets of every member at every point (rows = points).
    [[nodiscard]] JetBatch eval_batch(std::span<const Point> points) const {
        for (const auto& x : points) {
            if (x.size() != dim_) {
                throw DimensionError("point dimension " + std::to_string(x.size()) +
                                     " does not match basis input dimension " + std::to_string(dim_));
            }
            if (!x.allFinite()) {
                throw NumericalError("non-finite evaluation point");
            }
        }
        return std::visit([&](const auto& k) { return eval(k, points); }, kind_);
    }

    /// Member values only (rows = points).
    [[nodiscard]] Matrix eval_values(std::span<const Point> points) const {
        return std::visit([&](const auto& k) { return values(k, points); }, kind_);
    }

private:
    Kind kind_;
    Eigen::Index size_ = 0;
    Eigen::Index dim_ = 0;

    void init(const basis_kind::Trunk& k) {
        k.net.validate();
        size_ = k.net.output_dim();
        dim_ = k.net.input_dim();
    }
    void init(const basis_kind::ScaledUnion& k) {
        k.net.validate();
        k.scales.validate();
        size_ = k.net.output_dim() * static_cast<Eigen::Index>(k.scales.values.size());
        dim_ = k.net.input_dim();
    }
    void init(const basis_kind::RandomFeature& k) {
        k.net.validate();
        size_ = k.net.output_dim();
        dim_ = k.net.input_dim();
    }
    void init(const basis_kind::PascalPoly& k) {
        if (k.max_degree < 0) {
            throw ConfigError("Pascal basis degree must be >= 0");
        }
        size_ = static_cast<Eigen::Index>(k.max_degree + 1) * (k.max_degree + 2) / 2;
        dim_ = 2;
    }
    void init(const basis_kind::LoraTrunk& k) {
        k.merged.validate();
        size_ = k.merged.output_dim();
        dim_ = k.merged.input_dim();
    }
    void init(const basis_kind::Explicit& k) {
        if (k.members.empty()) {
            throw ConfigError("explicit basis has no members");
        }
        size_ = static_cast<Eigen::Index>(k.members.size());
        dim_ = k.dim;
    }
    void init(const basis_kind::Concat& k) {
        if (k.parts.empty()) {
            throw ConfigError("concatenated basis has no parts");
        }
        dim_ = k.parts.front()->input_dim();
        for (const auto& part : k.parts) {
            if (part->input_dim() != dim_) {
                throw DimensionError("concatenated bases differ in input dimension");
            }
            size_ += part->size();
        }
    }

    JetBatch eval(const basis_kind::Trunk& k, std::span<const Point> pts) const {
        return detail::chunked(pts, size_, dim_, [&](auto chunk) {
            return detail::forward_jets(k.net.layers, chunk, false);
        });
    }
    JetBatch eval(const basis_kind::ScaledUnion& k, std::span<const Point> pts) const {
        const auto I = k.net.output_dim();
        JetBatch out(static_cast<Eigen::Index>(pts.size()), size_, dim_);
        for (std::size_t j = 0; j < k.scales.values.size(); ++j) {
            const double p = k.scales.values[j];
            auto part = detail::chunked(pts, I, dim_, [&](auto chunk) {
                return detail::forward_jets(k.net.layers, chunk, false, p);
            });
            out.place(part, 0, static_cast<Eigen::Index>(j) * I);
        }
        return out;
    }
    JetBatch eval(const basis_kind::RandomFeature& k, std::span<const Point> pts) const {
        return detail::chunked(pts, size_, dim_, [&](auto chunk) {
            return detail::forward_jets(k.net.layers, chunk, true);
        });
    }
    JetBatch eval(const basis_kind::PascalPoly& k, std::span<const Point> pts) const {
        const auto P = static_cast<Eigen::Index>(pts.size());
        JetBatch out(P, size_, 2);
        Matrix& hxx = out.hess_at(0, 0);
        Matrix& hxy = out.hess_at(0, 1);
        Matrix& hyy = out.hess_at(1, 1);
        for (Eigen::Index p = 0; p < P; ++p) {
            const double x = pts[static_cast<std::size_t>(p)][0];
            const double y = pts[static_cast<std::size_t>(p)][1];
            Eigen::Index col = 0;
            for (int deg = 0; deg <= k.max_degree; ++deg) {
                for (int a = deg; a >= 0; --a) {
                    const int b = deg - a;
                    using detail::ipow;
                    out.value(p, col) = ipow(x, a) * ipow(y, b);
                    out.grad[0](p, col) = a * ipow(x, a - 1) * ipow(y, b);
                    out.grad[1](p, col) = b * ipow(x, a) * ipow(y, b - 1);
                    hxx(p, col) = a * (a - 1) * ipow(x, a - 2) * ipow(y, b);
                    hxy(p, col) = a * b * ipow(x, a - 1) * ipow(y, b - 1);
                    hyy(p, col) = b * (b - 1) * ipow(x, a) * ipow(y, b - 2);
                    ++col;
                }
            }
        }
        return out;
    }
    JetBatch eval(const basis_kind::LoraTrunk& k, std::span<const Point> pts) const {
        return detail::chunked(pts, size_, dim_, [&](auto chunk) {
            return detail::forward_jets(k.merged.layers, chunk, false);
        });
    }
    JetBatch eval(const basis_kind::Explicit& k, std::span<const Point> pts) const {
        const auto P = static_cast<Eigen::Index>(pts.size());
        JetBatch out(P, size_, dim_);
        for (Eigen::Index p = 0; p < P; ++p) {
            for (Eigen::Index i = 0; i < size_; ++i) {
                const Jet2 j = k.members[static_cast<std::size_t>(i)](pts[static_cast<std::size_t>(p)]);
                out.value(p, i) = j.value;
                for (Eigen::Index a = 0; a < dim_; ++a) {
                    out.grad[static_cast<std::size_t>(a)](p, i) = j.grad[a];
                    for (Eigen::Index b = a; b < dim_; ++b) {
                        out.hess_at(a, b)(p, i) = j.hess(a, b);
                    }
                }
            }
        }
        return out;
    }
    JetBatch eval(const basis_kind::Concat& k, std::span<const Point> pts) const {
        JetBatch out(static_cast<Eigen::Index>(pts.size()), size_, dim_);
        Eigen::Index col = 0;
        for (const auto& part : k.parts) {
            out.place(part->eval_batch(pts), 0, col);
            col += part->size();
        }
        return out;
    }

    static Matrix points_matrix(std::span<const Point> pts, Eigen::Index dim, double scale = 1.0) {
        Matrix X(dim, static_cast<Eigen::Index>(pts.size()));
        for (std::size_t p = 0; p < pts.size(); ++p) {
            detail::check_input_dim(dim, pts[p].size());
            X.col(static_cast<Eigen::Index>(p)) = scale * pts[p];
        }
        return X;
    }

    Matrix values(const basis_kind::Trunk& k, std::span<const Point> pts) const {
        return detail::forward_values(k.net.layers, points_matrix(pts, dim_), false).transpose();
    }
    Matrix values(const basis_kind::ScaledUnion& k, std::span<const Point> pts) const {
        const auto I = k.net.output_dim();
        Matrix out(static_cast<Eigen::Index>(pts.size()), size_);
        for (std::size_t j = 0; j < k.scales.values.size(); ++j) {
            out.middleCols(static_cast<Eigen::Index>(j) * I, I) =
                detail::forward_values(k.net.layers, points_matrix(pts, dim_, k.scales.values[j]), false)
                    .transpose();
        }
        return out;
    }
    Matrix values(const basis_kind::RandomFeature& k, std::span<const Point> pts) const {
        return detail::forward_values(k.net.layers, points_matrix(pts, dim_), true).transpose();
    }
    Matrix values(const basis_kind::LoraTrunk& k, std::span<const Point> pts) const {
        return detail::forward_values(k.merged.layers, points_matrix(pts, dim_), false).transpose();
    }
    template <typename K>
    Matrix values(const K& k, std::span<const Point> pts) const {
        return eval(k, pts).value;
    }
};

/// Jets of every member of `basis` at x.
inline std::vector<Jet2> eval_jets(const BasisSet& basis, const Point& x) {
    const std::array<Point, 1> one{x};
    const auto batch = basis.eval_batch(one);
    std::vector<Jet2> out;
    batch.jets_at(0, out);
    return out;
}

inline BasisSet make_trunk_basis(MlpSpec net) {
    return BasisSet(basis_kind::Trunk{std::move(net)});
}

inline BasisSet make_scaled_union(MlpSpec trunk, ScaleSet scales) {
    return BasisSet(basis_kind::ScaledUnion{std::move(trunk), std::move(scales)});
}

inline BasisSet make_pascal_basis(int max_degree) {
    return BasisSet(basis_kind::PascalPoly{max_degree});
}

inline BasisSet make_lora_trunk(MlpSpec base, LoraParams lora) {
    MlpSpec merged = merge_lora(base, lora);
    return BasisSet(basis_kind::LoraTrunk{std::move(base), std::move(lora), std::move(merged)});
}

inline BasisSet concat_bases(std::vector<BasisSet> parts) {
    basis_kind::Concat c;
    for (auto& p : parts) {
        c.parts.push_back(std::make_shared<const BasisSet>(std::move(p)));
    }
    return BasisSet(std::move(c));
}

/// Random-weight feature net: `depth` tanh layers with i.i.d. U[-1,1]
/// weights and biases; the first depth-1 layers have `width_hidden` units and
/// the last has `dof` units, whose activations are the basis members.
inline BasisSet make_random_feature(int depth, int width_hidden, int dof, std::uint64_t seed,
                                    Eigen::Index input_dim = 2) {
    if (depth < 1 || dof < 1 || (depth > 1 && width_hidden < 1) || input_dim < 1) {
        throw ConfigError("random feature net needs depth >= 1, dof >= 1 and positive widths");
    }
    Rng rng(seed);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    MlpSpec net;
    Eigen::Index in = input_dim;
    for (int l = 0; l < depth; ++l) {
        const Eigen::Index out = (l + 1 == depth) ? dof : width_hidden;
        DenseLayer layer;
        layer.weight = Matrix::NullaryExpr(out, in, [&] { return uni(rng); });
        layer.bias = Vector::NullaryExpr(out, [&] { return uni(rng); });
        net.layers.push_back(std::move(layer));
        in = out;
    }
    return BasisSet(basis_kind::RandomFeature{std::move(net)});
}

/// Scales chosen so that p * W_1 x + b_1 stays inside the active range of
/// tanh (|.| <= 3) on the sample points. The search grid is 0.1 * 1.25^k,
/// k = 0..10, so every candidate stays below 1.
inline ScaleSet compute_scale_set(const MlpSpec& trunk, int J, std::span<const Point> sample_points) {
    if (J < 1) {
        throw ConfigError("number of scales J must be >= 1");
    }
    if (J == 1) {
        return ScaleSet{{1.0}};
    }
    if (J == 2) {
        return ScaleSet{{1.0, 0.1}};
    }
    if (sample_points.empty()) {
        throw ConfigError("compute_scale_set needs sample points for J > 2");
    }
    trunk.validate();
    const auto& first = trunk.layers.front();
    Matrix X(first.in_dim(), static_cast<Eigen::Index>(sample_points.size()));
    for (std::size_t i = 0; i < sample_points.size(); ++i) {
        detail::check_input_dim(first.in_dim(), sample_points[i].size());
        X.col(static_cast<Eigen::Index>(i)) = sample_points[i];
    }
    const Matrix WX = first.weight * X;
    auto fits = [&](double p) {
        return ((p * WX).colwise() + first.bias).cwiseAbs().maxCoeff() <= 3.0;
    };
    double best = 0.0;
    for (int k = 0; k <= 10; ++k) {
        const double p = 0.1 * std::pow(1.25, k);
        if (fits(p)) {
            best = p;
        }
    }
    if (best <= 0.1) {
        throw ConfigError("no input scale p > 0.1 keeps the first-layer pre-activations within [-3, 3]; "
                          "use J <= 2");
    }
    ScaleSet s;
    s.values.push_back(1.0);
    const double h = (best - 0.1) / static_cast<double>(J - 2);
    for (int j = 0; j <= J - 2; ++j) {
        s.values.push_back(0.1 + j * h);
    }
    s.values.back() = best;
    return s;
}

} // namespace ftopinn
