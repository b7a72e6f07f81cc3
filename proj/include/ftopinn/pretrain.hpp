#pragma once

#include "ftopinn/assemble.hpp"
#include "ftopinn/backprop.hpp"
#include "ftopinn/field_sampler.hpp"
#include "ftopinn/oracle.hpp"

#include <numeric>

namespace ftopinn {

/// G(v)(x) = <N_b(v), N_t(x)>, v sampled at `sensors`.
struct DeepOnet {
    MlpSpec branch;
    MlpSpec trunk;
    std::vector<Point> sensors;

    void validate() const {
        branch.validate();
        trunk.validate();
        if (branch.output_dim() != trunk.output_dim()) {
            throw DimensionError("branch width " + std::to_string(branch.output_dim()) + " != trunk width " +
                                 std::to_string(trunk.output_dim()));
        }
        if (static_cast<Eigen::Index>(sensors.size()) != branch.input_dim()) {
            throw DimensionError(std::to_string(sensors.size()) + " sensors for a branch net with " +
                                 std::to_string(branch.input_dim()) + " inputs");
        }
        for (std::size_t i = 1; i < sensors.size(); ++i) {
            if (sensors[i].size() == 1 && !(sensors[i][0] > sensors[i - 1][0])) {
                throw ConfigError("1-D sensors must be strictly increasing");
            }
        }
    }

    [[nodiscard]] Vector branch_output(const Vector& v) const {
        if (v.size() != branch.input_dim()) {
            throw DimensionError("input function has " + std::to_string(v.size()) + " sensor values, model expects " +
                                 std::to_string(branch.input_dim()));
        }
        return evaluate(branch, v);
    }

    [[nodiscard]] Vector predict(const Vector& v, std::span<const Point> x) const {
        return evaluate(trunk, x) * branch_output(v);
    }
};

/// Two-subdomain operator net: b = N_b1(v|Omega_1) .* N_b2(v|Omega_2) and
/// G^j(v)(x) = <b, N_t^j(x)> for x in Omega_j. Input vectors are the
/// Omega_1 sensor values followed by the Omega_2 ones.
struct Ionet {
    MlpSpec branch1;
    MlpSpec branch2;
    MlpSpec trunk1;
    MlpSpec trunk2;
    std::vector<Point> sensors1;
    std::vector<Point> sensors2;
    family::AstroidGeometry geometry;

    void validate() const {
        const MlpSpec* nets[] = {&branch1, &branch2, &trunk1, &trunk2};
        for (const auto* n : nets) n->validate();
        const auto I = branch1.output_dim();
        if (branch2.output_dim() != I || trunk1.output_dim() != I || trunk2.output_dim() != I) {
            throw DimensionError("IONet branch and trunk nets must share their output width");
        }
        if (static_cast<Eigen::Index>(sensors1.size()) != branch1.input_dim() ||
            static_cast<Eigen::Index>(sensors2.size()) != branch2.input_dim()) {
            throw DimensionError("IONet sensor counts do not match the branch input widths");
        }
    }

    [[nodiscard]] Eigen::Index input_size() const { return branch1.input_dim() + branch2.input_dim(); }

    [[nodiscard]] Vector branch_output(const Vector& v) const {
        if (v.size() != input_size()) {
            throw DimensionError("input function has " + std::to_string(v.size()) + " sensor values, model expects " +
                                 std::to_string(input_size()));
        }
        const Vector b1 = evaluate(branch1, Vector(v.head(branch1.input_dim())));
        const Vector b2 = evaluate(branch2, Vector(v.tail(branch2.input_dim())));
        return b1.cwiseProduct(b2);
    }

    [[nodiscard]] bool in_omega1(const Point& x) const { return geometry.level(x) < -1e-12; }

    [[nodiscard]] Vector predict(const Vector& v, std::span<const Point> x) const {
        const Vector b = branch_output(v);
        Vector out(static_cast<Eigen::Index>(x.size()));
        for (std::size_t p = 0; p < x.size(); ++p) {
            const auto& t = in_omega1(x[p]) ? trunk1 : trunk2;
            out[static_cast<Eigen::Index>(p)] = evaluate(t, Vector(x[p])).dot(b);
        }
        return out;
    }
};

/// One input function (sensor values) with solution values at scattered points.
struct OperatorSample {
    Vector v;
    std::vector<Point> x;
    Vector u;
    double parameter = std::numeric_limits<double>::quiet_NaN();  // m for interface samples
};

using Dataset = std::vector<OperatorSample>;

struct DatasetConfig {
    int samples = 1000;
    int points_per_sample = 100;
    RbfGrf grf;
    int oracle_nx = 129;
    int oracle_nt = 129;
    std::uint64_t seed = 0;
    int threads = 1;

    void validate() const {
        if (samples < 1) throw ConfigError("dataset needs at least one sample");
        if (points_per_sample < 1) throw ConfigError("dataset needs at least one point per sample");
        grf.validate();
    }
};

inline std::vector<Point> sensor_points(const Vector& grid) {
    std::vector<Point> s;
    for (Eigen::Index i = 0; i < grid.size(); ++i) {
        Point p(1);
        p << grid[i];
        s.push_back(p);
    }
    return s;
}

namespace detail {

/// `count` random nodes of a reference grid, values exact (no interpolation).
inline void sample_grid_nodes(const GridSolution& g, int count, Rng& rng, OperatorSample& out) {
    std::uniform_int_distribution<Eigen::Index> ix(0, g.nx() - 1), it(0, g.nt() - 1);
    out.u.resize(count);
    out.x.clear();
    for (int p = 0; p < count; ++p) {
        const auto i = ix(rng);
        const auto n = it(rng);
        out.x.push_back(make_point(g.x[i], g.t[n]));
        out.u[p] = g.values(i, n);
    }
}

template <typename SolveFn>
Dataset build_dataset(const DatasetConfig& cfg, const std::vector<Vector>& inputs, SolveFn&& solve) {
    Dataset data(inputs.size());
    parallel_blocks(inputs.size(), cfg.threads, [&](std::size_t b, std::size_t e) {
        for (std::size_t s = b; s < e; ++s) {
            try {
                const GridSolution g = solve(s, inputs[s]);
                Rng rng(cfg.seed ^ (0x9e3779b97f4a7c15ULL * (s + 1)));
                data[s].v = inputs[s];
                sample_grid_nodes(g, cfg.points_per_sample, rng, data[s]);
            } catch (const Error& err) {
                throw NumericalError("oracle failed on sample " + std::to_string(s) + ": " + err.what());
            }
        }
    });
    return data;
}

} // namespace detail

/// Diffusion-reaction solution for the source given by its sensor values.
inline GridSolution diffusion_reaction_reference(const Vector& f_sensors, double D, double k, int nx, int nt) {
    const GridFunction f(unit_grid(static_cast<int>(f_sensors.size())), f_sensors);
    ImplicitGrid grid;
    grid.nx = nx;
    grid.nt = nt;
    return solve_diffusion_reaction([&f](double x, double) { return f(x); }, D, k, grid);
}

/// Advection solution for the coefficient given by its sensor values.
inline GridSolution advection_reference(const Vector& a_sensors, int nx, int nt) {
    const GridFunction a(unit_grid(static_cast<int>(a_sensors.size())), a_sensors);
    AdvectionGrid grid;
    grid.nx = nx;
    grid.nt = nt;
    return solve_advection_lw([&a](double x) { return a(x); }, grid);
}

/// Inputs f ~ GRF, targets from the Crank-Nicolson reference.
inline Dataset make_diffusion_reaction_dataset(const DatasetConfig& cfg, double D = 0.01, double k = 0.01) {
    cfg.validate();
    const auto inputs = sample_rbf_grf(cfg.grf, cfg.samples, cfg.seed);
    return detail::build_dataset(cfg, inputs, [&](std::size_t, const Vector& f) {
        return diffusion_reaction_reference(f, D, k, cfg.oracle_nx, cfg.oracle_nt);
    });
}

/// Inputs a = v - min v + 1 with v ~ GRF, targets from Lax-Wendroff.
inline Dataset make_advection_dataset(const DatasetConfig& cfg) {
    cfg.validate();
    auto inputs = sample_rbf_grf(cfg.grf, cfg.samples, cfg.seed);
    for (auto& v : inputs) v = to_coefficient(v);
    return detail::build_dataset(cfg, inputs, [&](std::size_t, const Vector& a) {
        return advection_reference(a, cfg.oracle_nx, cfg.oracle_nt);
    });
}

/// Inputs u0 ~ periodic GRF (sensor values on cfg.grf.sensors equispaced
/// points of [0,1]), targets from the Burgers reference.
inline Dataset make_burgers_dataset(const DatasetConfig& cfg, const PeriodicGrf& grf, double mu = 0.01) {
    cfg.validate();
    const auto u0 = sample_periodic_grf(grf, cfg.samples, cfg.seed);
    std::vector<Vector> inputs;
    for (const auto& f : u0) inputs.push_back(f.on_grid(unit_grid(cfg.grf.sensors)));
    return detail::build_dataset(cfg, inputs, [&](std::size_t s, const Vector&) {
        ImplicitGrid grid;
        grid.nx = cfg.oracle_nx;
        grid.nt = cfg.oracle_nt;
        return solve_burgers([&f = u0[s]](double x) { return f(x); }, mu, grid);
    });
}

struct InterfaceDatasetConfig {
    int samples = 1000;
    int points_per_sample = 100;
    double m_min = 0.5;
    double m_max = 20.0;
    int sensor_grid = 15;  // sensors on an n x n grid of [-1,1]^2, split by subdomain
    std::uint64_t seed = 0;

    void validate() const {
        if (samples < 1 || points_per_sample < 1) throw ConfigError("interface dataset needs samples and points");
        if (!(m_min > 0.0) || !(m_max >= m_min)) throw ConfigError("interface dataset needs 0 < m_min <= m_max");
        if (sensor_grid < 3) throw ConfigError("interface sensor grid must be at least 3 x 3");
    }
};

/// Sensor points of the two subdomains; points within 1e-12 of the interface are dropped.
inline std::pair<std::vector<Point>, std::vector<Point>> interface_sensors(int n, const family::AstroidGeometry& geo) {
    std::pair<std::vector<Point>, std::vector<Point>> s;
    const Vector g = Vector::LinSpaced(n, -1.0, 1.0);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            const Point x = make_point(g[i], g[j]);
            const double lv = geo.level(x);
            if (std::abs(lv) <= 1e-12) continue;
            (lv < 0.0 ? s.first : s.second).push_back(x);
        }
    }
    return s;
}

/// Source term of the closed-form family at the sensors (Omega_1 then Omega_2).
inline Vector interface_input(double m, const std::vector<Point>& s1, const std::vector<Point>& s2) {
    Vector v(static_cast<Eigen::Index>(s1.size() + s2.size()));
    Eigen::Index k = 0;
    for (const auto& x : s1) v[k++] = interface_exact(m, x).f1;
    for (const auto& x : s2) v[k++] = interface_exact(m, x).f2;
    return v;
}

inline Dataset make_interface_dataset(const InterfaceDatasetConfig& cfg, const family::AstroidGeometry& geo = {}) {
    cfg.validate();
    const auto [s1, s2] = interface_sensors(cfg.sensor_grid, geo);
    Rng rng(cfg.seed);
    std::uniform_real_distribution<double> m(cfg.m_min, cfg.m_max), box(-1.0, 1.0);
    Dataset data(static_cast<std::size_t>(cfg.samples));
    for (auto& s : data) {
        s.parameter = m(rng);
        s.v = interface_input(s.parameter, s1, s2);
        s.u.resize(cfg.points_per_sample);
        for (int p = 0; p < cfg.points_per_sample; ++p) {
            const Point x = make_point(box(rng), box(rng));
            s.x.push_back(x);
            s.u[p] = interface_exact(s.parameter, x, geo).u;
        }
    }
    return data;
}

// Binary dataset file: magic "FTOD", int32 count, then per sample
// int32 m, int32 n, int32 d, float64 parameter, v[m], then n points of
// d coordinates and n values.
inline void write_dataset_binary(const std::string& path, const Dataset& data) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot write " + path);
    auto i32 = [&](std::int32_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); };
    auto f64 = [&](double v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); };
    os.write("FTOD", 4);
    i32(static_cast<std::int32_t>(data.size()));
    for (const auto& s : data) {
        const auto d = s.x.empty() ? 0 : s.x.front().size();
        i32(static_cast<std::int32_t>(s.v.size()));
        i32(static_cast<std::int32_t>(s.x.size()));
        i32(static_cast<std::int32_t>(d));
        f64(s.parameter);
        for (Eigen::Index i = 0; i < s.v.size(); ++i) f64(s.v[i]);
        for (const auto& x : s.x)
            for (Eigen::Index c = 0; c < d; ++c) f64(x[c]);
        for (Eigen::Index i = 0; i < s.u.size(); ++i) f64(s.u[i]);
    }
}

inline Dataset read_dataset_binary(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot read " + path);
    auto fail = [&] { throw ConfigError(path + ": truncated or malformed dataset file"); };
    auto i32 = [&] {
        std::int32_t v = 0;
        if (!is.read(reinterpret_cast<char*>(&v), sizeof v) || v < 0) fail();
        return v;
    };
    auto f64 = [&] {
        double v = 0.0;
        if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) fail();
        return v;
    };
    char magic[4] = {};
    if (!is.read(magic, 4) || std::memcmp(magic, "FTOD", 4) != 0) {
        throw ConfigError(path + ": not a dataset file");
    }
    Dataset data(static_cast<std::size_t>(i32()));
    for (auto& s : data) {
        const auto m = i32(), n = i32(), d = i32();
        if (d > 3) fail();
        s.parameter = f64();
        s.v.resize(m);
        for (Eigen::Index i = 0; i < m; ++i) s.v[i] = f64();
        for (std::int32_t p = 0; p < n; ++p) {
            Point x(d);
            for (Eigen::Index c = 0; c < d; ++c) x[c] = f64();
            s.x.push_back(x);
        }
        s.u.resize(n);
        for (Eigen::Index i = 0; i < n; ++i) s.u[i] = f64();
    }
    return data;
}

/// Glorot-normal weights and zero biases for the given layer widths.
inline MlpSpec init_mlp(const std::vector<int>& widths, Rng& rng) {
    if (widths.size() < 2) {
        throw ConfigError("an MLP needs at least input and output widths");
    }
    MlpSpec net;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        if (widths[l] < 1 || widths[l + 1] < 1) throw ConfigError("layer widths must be positive");
        std::normal_distribution<double> g(0.0, std::sqrt(2.0 / (widths[l] + widths[l + 1])));
        net.layers.push_back({Matrix::NullaryExpr(widths[l + 1], widths[l], [&] { return g(rng); }),
                              Vector::Zero(widths[l + 1])});
    }
    return net;
}

/// Branch m -> I and trunk d -> I, `depth` linear layers of `width` units each.
inline DeepOnet init_deeponet(std::vector<Point> sensors, Eigen::Index trunk_input, int depth, int width, Rng& rng) {
    if (depth < 1) throw ConfigError("network depth must be >= 1");
    std::vector<int> b(static_cast<std::size_t>(depth) + 1, width), t = b;
    b.front() = static_cast<int>(sensors.size());
    t.front() = static_cast<int>(trunk_input);
    DeepOnet m;
    m.branch = init_mlp(b, rng);
    m.trunk = init_mlp(t, rng);
    m.sensors = std::move(sensors);
    return m;
}

inline Ionet init_ionet(std::vector<Point> s1, std::vector<Point> s2, int depth, int width, Rng& rng,
                        family::AstroidGeometry geo = {}) {
    if (depth < 1) throw ConfigError("network depth must be >= 1");
    std::vector<int> w(static_cast<std::size_t>(depth) + 1, width);
    Ionet m;
    w.front() = static_cast<int>(s1.size());
    m.branch1 = init_mlp(w, rng);
    w.front() = static_cast<int>(s2.size());
    m.branch2 = init_mlp(w, rng);
    w.front() = 2;
    m.trunk1 = init_mlp(w, rng);
    m.trunk2 = init_mlp(w, rng);
    m.sensors1 = std::move(s1);
    m.sensors2 = std::move(s2);
    m.geometry = geo;
    return m;
}

struct TrainConfig {
    int samples = 1000;  // dataset size S
    int epochs = 300;
    int batch_size = 50;
    AdamConfig adam;
    double final_lr_fraction = 1.0;  // lr decays geometrically to lr * fraction at the last epoch
    std::uint64_t seed = 0;
    bool normalize = true;  // standardize branch inputs and targets, folded into the weights afterwards

    void validate() const {
        if (samples < 1) throw ConfigError("training needs S >= 1");
        if (epochs < 0 || batch_size < 1) throw ConfigError("training needs epochs >= 0 and batch size >= 1");
        if (!(final_lr_fraction > 0.0 && final_lr_fraction <= 1.0)) {
            throw ConfigError("final_lr_fraction must be in (0, 1]");
        }
        adam.validate();
    }
};

template <typename Model>
struct TrainResult {
    Model model;
    std::vector<double> trace;  // mean training loss per epoch
    bool aborted = false;
};

namespace detail {

/// Stacked inputs and targets of a mini-batch; owner[k] is the sample of point k.
struct Batch {
    Matrix V;
    Matrix X;
    Vector u;
    std::vector<Eigen::Index> owner;
};

inline Batch make_batch(const Dataset& data, std::span<const std::size_t> idx) {
    Batch b;
    std::size_t n = 0;
    for (auto s : idx) n += data[s].x.size();
    const auto m = data[idx[0]].v.size();
    const auto d = data[idx[0]].x.empty() ? 0 : data[idx[0]].x.front().size();
    b.V.resize(m, static_cast<Eigen::Index>(idx.size()));
    b.X.resize(d, static_cast<Eigen::Index>(n));
    b.u.resize(static_cast<Eigen::Index>(n));
    Eigen::Index k = 0;
    for (std::size_t j = 0; j < idx.size(); ++j) {
        const auto& s = data[idx[j]];
        if (s.v.size() != m) throw DimensionError("dataset samples have different sensor counts");
        b.V.col(static_cast<Eigen::Index>(j)) = s.v;
        for (std::size_t p = 0; p < s.x.size(); ++p, ++k) {
            b.X.col(k) = s.x[p];
            b.u[k] = s.u[static_cast<Eigen::Index>(p)];
            b.owner.push_back(static_cast<Eigen::Index>(j));
        }
    }
    return b;
}

inline std::vector<LayerGrad> zero_grads(const MlpSpec& net) {
    std::vector<LayerGrad> g;
    for (const auto& l : net.layers) g.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
    return g;
}

inline void collect(MlpSpec& net, const std::vector<LayerGrad>& g, std::vector<ParamRef>& p, std::vector<GradRef>& q) {
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        p.push_back(flat(net.layers[l].weight));
        p.push_back(flat(net.layers[l].bias));
        q.push_back(flat_grad(g[l].weight));
        q.push_back(flat_grad(g[l].bias));
    }
}

/// Branch inputs x -> (x - mu) / sd and targets u -> u / su during training;
/// undone by folding into the first branch layer(s) and the last trunk layer(s).
struct Scaling {
    double mu = 0.0;
    double sd = 1.0;
    double su = 1.0;
};

inline Scaling fit_scaling(const Dataset& data, bool enabled) {
    Scaling s;
    if (!enabled) return s;
    double sum = 0.0, sq = 0.0, usq = 0.0;
    std::size_t n = 0, nu = 0;
    for (const auto& d : data) {
        sum += d.v.sum();
        sq += d.v.squaredNorm();
        n += static_cast<std::size_t>(d.v.size());
        usq += d.u.squaredNorm();
        nu += static_cast<std::size_t>(d.u.size());
    }
    s.mu = sum / static_cast<double>(n);
    const double var = sq / static_cast<double>(n) - s.mu * s.mu;
    s.sd = var > 1e-24 ? std::sqrt(var) : 1.0;
    const double urms = std::sqrt(usq / static_cast<double>(std::max<std::size_t>(nu, 1)));
    s.su = urms > 1e-12 ? urms : 1.0;
    return s;
}

inline Dataset apply_scaling(const Dataset& data, const Scaling& s) {
    Dataset out = data;
    for (auto& d : out) {
        d.v = (d.v.array() - s.mu) / s.sd;
        d.u /= s.su;
    }
    return out;
}

/// Makes the net fed raw inputs behave as it did on standardized ones.
inline void fold_input(MlpSpec& net, const Scaling& s) {
    auto& l0 = net.layers.front();
    l0.bias -= (s.mu / s.sd) * l0.weight.rowwise().sum();
    l0.weight /= s.sd;
}

inline void fold_output(MlpSpec& net, double factor) {
    net.layers.back().weight *= factor;
    net.layers.back().bias *= factor;
}

} // namespace detail

struct DeepOnetGrad {
    std::vector<LayerGrad> branch;
    std::vector<LayerGrad> trunk;
};

/// Mean squared error of the model over the given samples; fills `grad`.
inline double deeponet_loss(const DeepOnet& model, const Dataset& data, std::span<const std::size_t> idx,
                            DeepOnetGrad* grad = nullptr) {
    const auto b = detail::make_batch(data, idx);
    const auto bt = forward_tape(model.branch.layers, b.V);
    const auto tt = forward_tape(model.trunk.layers, b.X);
    const Matrix& B = bt.output();
    const Matrix& T = tt.output();
    const auto N = b.u.size();
    Vector e(N);
    for (Eigen::Index k = 0; k < N; ++k) e[k] = B.col(b.owner[static_cast<std::size_t>(k)]).dot(T.col(k)) - b.u[k];
    const double loss = e.squaredNorm() / static_cast<double>(N);
    if (grad != nullptr) {
        Matrix dT(T.rows(), N);
        Matrix dB = Matrix::Zero(B.rows(), B.cols());
        for (Eigen::Index k = 0; k < N; ++k) {
            const double w = 2.0 * e[k] / static_cast<double>(N);
            const auto o = b.owner[static_cast<std::size_t>(k)];
            dT.col(k) = w * B.col(o);
            dB.col(o) += w * T.col(k);
        }
        grad->branch = backward(model.branch.layers, bt, dB);
        grad->trunk = backward(model.trunk.layers, tt, dT);
    }
    return loss;
}

struct IonetGrad {
    std::vector<LayerGrad> branch1;
    std::vector<LayerGrad> branch2;
    std::vector<LayerGrad> trunk1;
    std::vector<LayerGrad> trunk2;
};

inline double ionet_loss(const Ionet& model, const Dataset& data, std::span<const std::size_t> idx,
                         IonetGrad* grad = nullptr) {
    const auto b = detail::make_batch(data, idx);
    const auto m1 = model.branch1.input_dim();
    if (b.V.rows() != model.input_size()) {
        throw DimensionError("dataset sensor count " + std::to_string(b.V.rows()) + " != IONet input size " +
                             std::to_string(model.input_size()));
    }
    const auto b1t = forward_tape(model.branch1.layers, b.V.topRows(m1));
    const auto b2t = forward_tape(model.branch2.layers, b.V.bottomRows(b.V.rows() - m1));
    const Matrix B = b1t.output().cwiseProduct(b2t.output());
    const auto N = b.u.size();
    std::vector<Eigen::Index> side(static_cast<std::size_t>(N)), col(static_cast<std::size_t>(N));
    Eigen::Index n1 = 0, n2 = 0;
    for (Eigen::Index k = 0; k < N; ++k) {
        const bool first = model.in_omega1(b.X.col(k));
        side[static_cast<std::size_t>(k)] = first ? 0 : 1;
        col[static_cast<std::size_t>(k)] = first ? n1++ : n2++;
    }
    Matrix X1(2, n1), X2(2, n2);
    for (Eigen::Index k = 0; k < N; ++k) {
        (side[static_cast<std::size_t>(k)] == 0 ? X1 : X2).col(col[static_cast<std::size_t>(k)]) = b.X.col(k);
    }
    const auto t1 = forward_tape(model.trunk1.layers, X1);
    const auto t2 = forward_tape(model.trunk2.layers, X2);
    auto trunk_col = [&](Eigen::Index k) {
        return side[static_cast<std::size_t>(k)] == 0 ? t1.output().col(col[static_cast<std::size_t>(k)])
                                                      : t2.output().col(col[static_cast<std::size_t>(k)]);
    };
    Vector e(N);
    for (Eigen::Index k = 0; k < N; ++k) e[k] = B.col(b.owner[static_cast<std::size_t>(k)]).dot(trunk_col(k)) - b.u[k];
    const double loss = e.squaredNorm() / static_cast<double>(N);
    if (grad != nullptr) {
        Matrix dT1(B.rows(), n1), dT2(B.rows(), n2);
        Matrix dB = Matrix::Zero(B.rows(), B.cols());
        for (Eigen::Index k = 0; k < N; ++k) {
            const double w = 2.0 * e[k] / static_cast<double>(N);
            const auto o = b.owner[static_cast<std::size_t>(k)];
            (side[static_cast<std::size_t>(k)] == 0 ? dT1 : dT2).col(col[static_cast<std::size_t>(k)]) = w * B.col(o);
            dB.col(o) += w * trunk_col(k);
        }
        grad->branch1 = backward(model.branch1.layers, b1t, dB.cwiseProduct(b2t.output()));
        grad->branch2 = backward(model.branch2.layers, b2t, dB.cwiseProduct(b1t.output()));
        grad->trunk1 = n1 > 0 ? backward(model.trunk1.layers, t1, dT1) : detail::zero_grads(model.trunk1);
        grad->trunk2 = n2 > 0 ? backward(model.trunk2.layers, t2, dT2) : detail::zero_grads(model.trunk2);
    }
    return loss;
}

namespace detail {

/// Shared epoch loop: shuffles, batches, and applies Adam through `step`,
/// which returns the batch loss after updating the model.
template <typename StepFn>
std::vector<double> run_epochs(std::size_t n, const TrainConfig& cfg, Adam& adam, StepFn&& step, bool& aborted) {
    Rng rng(cfg.seed);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<double> trace;
    const auto bs = static_cast<std::size_t>(cfg.batch_size);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double progress = cfg.epochs > 1 ? static_cast<double>(epoch) / (cfg.epochs - 1) : 0.0;
        adam.set_lr(cfg.adam.lr * std::pow(cfg.final_lr_fraction, progress));
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += bs) {
            const std::span<const std::size_t> idx(order.data() + start, std::min(bs, n - start));
            const double l = step(idx);
            if (!std::isfinite(l)) {
                aborted = true;
                return trace;
            }
            total += l;
            ++batches;
        }
        trace.push_back(total / static_cast<double>(batches));
    }
    return trace;
}

} // namespace detail

/// Mean-squared-error regression of a DeepONet with Adam. On a non-finite
/// loss training stops and the last finite model is returned.
inline TrainResult<DeepOnet> train_deeponet(DeepOnet model, const Dataset& data, const TrainConfig& cfg) {
    cfg.validate();
    model.validate();
    if (data.empty()) throw ConfigError("empty training dataset");
    const auto sc = detail::fit_scaling(data, cfg.normalize);
    const Dataset scaled = detail::apply_scaling(data, sc);
    Adam adam(cfg.adam);
    DeepOnet last = model;
    DeepOnetGrad g;
    TrainResult<DeepOnet> res;
    res.trace = detail::run_epochs(scaled.size(), cfg, adam, [&](std::span<const std::size_t> idx) {
        const double l = deeponet_loss(model, scaled, idx, &g);
        if (!std::isfinite(l)) return l;
        last = model;
        std::vector<ParamRef> p;
        std::vector<GradRef> q;
        detail::collect(model.branch, g.branch, p, q);
        detail::collect(model.trunk, g.trunk, p, q);
        adam.step(p, q);
        return l;
    }, res.aborted);
    res.model = res.aborted ? std::move(last) : std::move(model);
    detail::fold_input(res.model.branch, sc);
    detail::fold_output(res.model.trunk, sc.su);
    return res;
}

inline TrainResult<Ionet> train_ionet(Ionet model, const Dataset& data, const TrainConfig& cfg) {
    cfg.validate();
    model.validate();
    if (data.empty()) throw ConfigError("empty training dataset");
    const auto sc = detail::fit_scaling(data, cfg.normalize);
    const Dataset scaled = detail::apply_scaling(data, sc);
    Adam adam(cfg.adam);
    Ionet last = model;
    IonetGrad g;
    TrainResult<Ionet> res;
    res.trace = detail::run_epochs(scaled.size(), cfg, adam, [&](std::span<const std::size_t> idx) {
        const double l = ionet_loss(model, scaled, idx, &g);
        if (!std::isfinite(l)) return l;
        last = model;
        std::vector<ParamRef> p;
        std::vector<GradRef> q;
        detail::collect(model.branch1, g.branch1, p, q);
        detail::collect(model.branch2, g.branch2, p, q);
        detail::collect(model.trunk1, g.trunk1, p, q);
        detail::collect(model.trunk2, g.trunk2, p, q);
        adam.step(p, q);
        return l;
    }, res.aborted);
    res.model = res.aborted ? std::move(last) : std::move(model);
    detail::fold_input(res.model.branch1, sc);
    detail::fold_input(res.model.branch2, sc);
    detail::fold_output(res.model.trunk1, sc.su);
    detail::fold_output(res.model.trunk2, sc.su);
    return res;
}

/// Relative L2 error of the model over every point of the dataset.
template <typename Model>
double dataset_rel_l2(const Model& model, const Dataset& data) {
    double num = 0.0, den = 0.0;
    for (const auto& s : data) {
        const Vector p = model.predict(s.v, s.x);
        num += (p - s.u).squaredNorm();
        den += s.u.squaredNorm();
    }
    return std::sqrt(num / den);
}

} // namespace ftopinn
