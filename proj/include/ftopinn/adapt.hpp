#pragma once

#include "ftopinn/assemble.hpp"
#include "ftopinn/backprop.hpp"

#include <fstream>
#include <iomanip>

namespace ftopinn {

struct AdaptConfig {
    int iterations = 2000;
    AdamConfig adam{.lr = 1e-4};
    std::optional<double> lambda_b;  // unset: 10 for advection, 1 otherwise
    double fd_step = 5e-4;
    std::size_t layers = 5;
    Eigen::Index rank = 5;
    std::uint64_t seed = 0;
    int log_every = 1;

    void validate() const {
        if (iterations < 0) {
            throw ConfigError("phase-2 iterations must be >= 0");
        }
        if (!(fd_step > 0.0)) {
            throw ConfigError("phase-2 FD step must be positive");
        }
        if (lambda_b && !(*lambda_b >= 0.0)) {
            throw ConfigError("boundary loss weight must be >= 0");
        }
        if (log_every < 1) {
            throw ConfigError("log_every must be >= 1");
        }
        adam.validate();
    }

    [[nodiscard]] double boundary_weight(const ProblemSpec& p) const {
        if (lambda_b) return *lambda_b;
        return std::holds_alternative<family::Advection>(p.family) ? 10.0 : 1.0;
    }
};

struct TraceRow {
    int iteration = 0;
    double loss_d = 0.0;
    double loss_b = 0.0;
    double wall_seconds = 0.0;
};

inline void write_trace_csv(const std::string& path, const std::vector<TraceRow>& trace) {
    std::ofstream os(path);
    if (!os) {
        throw ConfigError("cannot write " + path);
    }
    os << "iteration,loss_D,loss_B,wall_time_s\n" << std::setprecision(17);
    for (const auto& r : trace) os << r.iteration << ',' << r.loss_d << ',' << r.loss_b << ',' << r.wall_seconds << '\n';
}

/// Gradient of the PINN loss with the same layout as the trainable state.
struct AdaptGrad {
    std::vector<LoraAdapter> adapters;
    Vector alpha;
};

/// PINN loss lambda_D * mean(r_D^2) + lambda_B * mean(r_B^2) of
/// u = alpha . psi(x), with psi the LoRA-augmented trunk, or its scaled union
/// [psi(s_1 x), ..., psi(s_J x)] when several scales are given. Derivatives
/// are central differences of network outputs on a 5-point stencil (mixed
/// second derivatives are not formed), so the residual of each row is a
/// function of a handful of network values.
class PinnLoss {
public:
    struct Value {
        double loss_d = 0.0;
        double loss_b = 0.0;
        [[nodiscard]] double total(double lambda_b) const { return loss_d + lambda_b * loss_b; }
    };

    PinnLoss(ProblemSpec problem, const CollocationSet& set, double fd_step, double lambda_b,
             ScaleSet scales = ScaleSet{{1.0}})
        : problem_(std::move(problem)), lambda_b_(lambda_b), scales_(std::move(scales)) {
        scales_.validate();
        if (problem_.is_interface()) {
            throw ConfigError("phase-2 adaptation supports single-domain families only");
        }
        if (!(fd_step > 0.0)) {
            throw ConfigError("FD step must be positive");
        }
        build_stencils(set.all(), fd_step);
    }

    [[nodiscard]] double lambda_b() const { return lambda_b_; }
    [[nodiscard]] Eigen::Index evaluation_points() const { return X_.cols(); }

    /// Loss at (net + lora, alpha); fills `grad` when given.
    Value evaluate(const MlpSpec& net, const LoraParams& lora, const Vector& alpha, AdaptGrad* grad = nullptr) const {
        const MlpSpec eff = merge_lora(net, lora);
        const Eigen::Index I = eff.output_dim();
        const auto J = static_cast<Eigen::Index>(scales_.values.size());
        if (alpha.size() != I * J) {
            throw DimensionError("alpha length " + std::to_string(alpha.size()) + " != trunk width " +
                                 std::to_string(I) + " x " + std::to_string(J) + " scales");
        }
        std::vector<ForwardTape> tapes;
        Vector u = Vector::Zero(X_.cols());
        for (Eigen::Index j = 0; j < J; ++j) {
            tapes.push_back(forward_tape(eff.layers, scales_.values[static_cast<std::size_t>(j)] * X_));
            u.noalias() += tapes.back().output().transpose() * alpha.segment(j * I, I);
        }
        Vector du = Vector::Zero(u.size());
        Value v;
        const double wd = n_interior_ > 0 ? 1.0 / static_cast<double>(n_interior_) : 0.0;
        const double wb = n_boundary_ > 0 ? lambda_b_ / static_cast<double>(n_boundary_) : 0.0;
        for (const auto& row : rows_) {
            const Vector us = u(row.index);
            const auto nr = nonlinear_residual_and_jacobian(problem_, row.jets, row.point, us, row.partner);
            const double r = nr.residual;
            const bool interior = row.point.tag == RowTag::interior;
            (interior ? v.loss_d : v.loss_b) += r * r;
            if (grad != nullptr) {
                du(row.index) += 2.0 * (interior ? wd : wb) * r * nr.jacobian;
            }
        }
        v.loss_d *= n_interior_ > 0 ? 1.0 / static_cast<double>(n_interior_) : 0.0;
        v.loss_b *= n_boundary_ > 0 ? 1.0 / static_cast<double>(n_boundary_) : 0.0;
        if (grad == nullptr) {
            return v;
        }
        grad->alpha.resize(alpha.size());
        std::vector<LayerGrad> lg;
        for (Eigen::Index j = 0; j < J; ++j) {
            const auto& tape = tapes[static_cast<std::size_t>(j)];
            grad->alpha.segment(j * I, I) = tape.output() * du;
            const Matrix dOut = alpha.segment(j * I, I) * du.transpose();
            auto part = backward(eff.layers, tape, dOut);
            if (lg.empty()) {
                lg = std::move(part);
                continue;
            }
            for (std::size_t l = 0; l < lg.size(); ++l) {
                lg[l].weight += part[l].weight;
                lg[l].bias += part[l].bias;
            }
        }
        grad->adapters.resize(lora.adapters.size());
        for (std::size_t k = 0; k < lora.layers.size(); ++k) {
            const auto& ad = lora.adapters[k];
            const auto& g = lg[lora.layers[k]];
            auto& out = grad->adapters[k];
            out.B = g.weight * ad.A.transpose();
            out.A = ad.B.transpose() * g.weight;
            out.bias = g.bias;
        }
        return v;
    }

private:
    struct StencilRow {
        CollocationPoint point;
        std::vector<Eigen::Index> index;  // columns of X_ feeding this row
        std::vector<Jet2> jets;
        std::vector<Jet2> partner;
    };

    Eigen::Index push_point(const Point& x) {
        points_.push_back(x);
        return static_cast<Eigen::Index>(points_.size() - 1);
    }

    /// Members of the FD stencil as pseudo basis functions: with alpha set to
    /// the stencil values, their jet combination is the FD jet of u.
    static std::vector<Jet2> stencil_members(Eigen::Index d, double h, bool full) {
        std::vector<Jet2> m;
        Jet2 c(d);
        c.value = 1.0;
        if (full) c.hess.diagonal().setConstant(-2.0 / (h * h));
        m.push_back(c);
        if (!full) return m;
        for (Eigen::Index k = 0; k < d; ++k) {
            for (double s : {1.0, -1.0}) {
                Jet2 j(d);
                j.grad[k] = s / (2.0 * h);
                j.hess(k, k) = 1.0 / (h * h);
                m.push_back(j);
            }
        }
        return m;
    }

    void add_stencil(const Point& x, double h, bool full, std::vector<Eigen::Index>& index) {
        index.push_back(push_point(x));
        if (!full) return;
        for (Eigen::Index k = 0; k < x.size(); ++k) {
            for (double s : {1.0, -1.0}) {
                Point y = x;
                y[k] += s * h;
                index.push_back(push_point(y));
            }
        }
    }

    void build_stencils(const std::vector<CollocationPoint>& pts, double h) {
        for (const auto& pt : pts) {
            StencilRow row;
            row.point = pt;
            const auto d = pt.x.size();
            const bool periodic = pt.tag == RowTag::periodic_value || pt.tag == RowTag::periodic_slope;
            const bool full = pt.tag == RowTag::interior || periodic;
            add_stencil(pt.x, h, full, row.index);
            row.jets = stencil_members(d, h, full);
            if (periodic) {
                add_stencil(pt.partner, h, full, row.index);
                const auto n = row.jets.size();
                row.partner.assign(n, Jet2(d));
                for (const auto& j : stencil_members(d, h, full)) row.partner.push_back(j);
                row.jets.resize(2 * n, Jet2(d));
            }
            (pt.tag == RowTag::interior ? n_interior_ : n_boundary_) += 1;
            rows_.push_back(std::move(row));
        }
        X_.resize(points_.empty() ? 0 : points_.front().size(), static_cast<Eigen::Index>(points_.size()));
        for (std::size_t p = 0; p < points_.size(); ++p) X_.col(static_cast<Eigen::Index>(p)) = points_[p];
        points_.clear();
    }

    ProblemSpec problem_;
    double lambda_b_;
    ScaleSet scales_;
    std::vector<Point> points_;
    Matrix X_;
    std::vector<StencilRow> rows_;
    std::size_t n_interior_ = 0;
    std::size_t n_boundary_ = 0;
};

struct AdaptResult {
    std::shared_ptr<const BasisSet> basis;  // LoRA trunk with the trained adapters merged
    LoraParams lora;
    Vector alpha;
    std::vector<TraceRow> trace;
    bool aborted = false;  // stopped at a non-finite loss; state is the last finite one
};

/// Phase 2: trains the LoRA factors and bias of the first cfg.layers layers
/// together with alpha on the PINN loss. Pretrained weights stay frozen.
inline AdaptResult adapt_trunk(const MlpSpec& trunk, const ProblemSpec& problem, const CollocationSet& set,
                               const AdaptConfig& cfg, const Vector& alpha0, const ScaleSet& scales = ScaleSet{{1.0}}) {
    cfg.validate();
    trunk.validate();
    scales.validate();
    const auto J = static_cast<Eigen::Index>(scales.values.size());
    if (alpha0.size() != trunk.output_dim() * J) {
        throw DimensionError("alpha0 length " + std::to_string(alpha0.size()) + " != trunk width " +
                             std::to_string(trunk.output_dim()) + " x " + std::to_string(J) + " scales");
    }
    Rng rng(cfg.seed);
    AdaptResult res;
    res.lora = init_lora(trunk, cfg.layers, cfg.rank, rng);
    res.alpha = alpha0;
    const PinnLoss loss(problem, set, cfg.fd_step, cfg.boundary_weight(problem), scales);
    Adam adam(cfg.adam);
    detail::Stopwatch clock;

    LoraParams last_lora = res.lora;
    Vector last_alpha = res.alpha;
    AdaptGrad g;
    for (int it = 0; it <= cfg.iterations; ++it) {
        const bool want_grad = it < cfg.iterations;
        const auto v = loss.evaluate(trunk, res.lora, res.alpha, want_grad ? &g : nullptr);
        if (!std::isfinite(v.total(loss.lambda_b()))) {
            res.lora = std::move(last_lora);
            res.alpha = std::move(last_alpha);
            res.aborted = true;
            break;
        }
        if (it % cfg.log_every == 0 || it == cfg.iterations) {
            res.trace.push_back({it, v.loss_d, v.loss_b, clock.seconds()});
        }
        if (!want_grad) break;
        last_lora = res.lora;
        last_alpha = res.alpha;
        std::vector<ParamRef> params;
        std::vector<GradRef> grads;
        for (std::size_t k = 0; k < res.lora.adapters.size(); ++k) {
            auto& ad = res.lora.adapters[k];
            const auto& gd = g.adapters[k];
            params.push_back(flat(ad.B));
            params.push_back(flat(ad.A));
            params.push_back(flat(ad.bias));
            grads.push_back(flat_grad(gd.B));
            grads.push_back(flat_grad(gd.A));
            grads.push_back(flat_grad(gd.bias));
        }
        params.push_back(flat(res.alpha));
        grads.push_back(flat_grad(g.alpha));
        adam.step(params, grads);
    }
    res.basis = J == 1 ? std::make_shared<const BasisSet>(make_lora_trunk(trunk, res.lora))
                       : std::make_shared<const BasisSet>(make_scaled_union(merge_lora(trunk, res.lora), scales));
    return res;
}

/// Refreezes the adapted trunk and reruns the phase-1 solve on it; nonlinear
/// problems start Newton from the phase-2 alpha.
inline Solution finalize(const AdaptResult& adapted, const ProblemSpec& problem, const CollocationSet& set,
                         const NewtonOptions& opts = {}) {
    return fit(problem, adapted.basis, set, opts, adapted.alpha);
}

} // namespace ftopinn
