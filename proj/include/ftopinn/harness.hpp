#pragma once

#include "ftopinn/adapt.hpp"
#include "ftopinn/weight_io.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <filesystem>
#include <set>

namespace ftopinn {

struct ProblemConfig {
    std::string family = "advection";  // advection | diffusion_reaction | burgers | elliptic_interface
    double beta = 0.2;                 // GRF length scale of a(x) or f(x)
    int sensors = 100;
    std::uint64_t input_seed = 0;      // draw of the input function
    double D = 0.01;
    double k = 0.01;
    double mu = 0.01;
    double m = 1.0;
    PeriodicGrf periodic;              // Burgers initial data
};

struct BasisConfig {
    std::string source = "random_feature";  // weights | random_feature | polynomial
    std::string weights;
    int scales = 1;    // J, trunk bases only
    int dof = 500;     // random features; split evenly between subdomains for interface problems
    int depth = 3;
    int width = 100;
    int degree = 6;
    std::uint64_t seed = 0;
};

struct Phase2Config {
    bool enabled = false;
    AdaptConfig adapt;
    CollocationCounts counts{1000, 500, 500, 0};
};

struct ExperimentConfig {
    ProblemConfig problem;
    BasisConfig basis;
    Phase2Config phase2;
    std::optional<CollocationCounts> collocation;  // unset: family defaults
    std::uint64_t seed = 0;                        // collocation sampling
    int newton_steps = 1;
    double rcond = 1e-10;
    int test_nx = 0;  // 0: family default
    int test_nt = 0;
    int reference_nx = 0;
    int reference_nt = 0;
    std::string output_dir;
    int threads = 1;
};

// ---- configuration (de)serialization --------------------------------------

namespace detail {

template <typename T>
void read_key(const Json& obj, const char* key, T& out) {
    if (obj.contains(key)) {
        try {
            out = obj.at(key).get<T>();
        } catch (const Json::exception&) {
            throw ConfigError(std::string("config key '") + key + "' has the wrong type");
        }
    }
}

inline void reject_unknown(const Json& obj, std::initializer_list<const char*> keys, const std::string& where) {
    if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
    const std::set<std::string> known(keys.begin(), keys.end());
    for (const auto& [k, v] : obj.items()) {
        if (!known.contains(k)) throw ConfigError("unknown key '" + k + "' in " + where);
    }
}

inline CollocationCounts counts_from_json(const Json& j, CollocationCounts c, const std::string& where) {
    reject_unknown(j, {"interior", "boundary", "initial", "interface"}, where);
    read_key(j, "interior", c.interior);
    read_key(j, "boundary", c.boundary);
    read_key(j, "initial", c.initial);
    read_key(j, "interface", c.interface);
    return c;
}

inline Json counts_to_json(const CollocationCounts& c) {
    return Json{{"interior", c.interior}, {"boundary", c.boundary}, {"initial", c.initial}, {"interface", c.interface}};
}

} // namespace detail

inline Json to_json(const ExperimentConfig& c) {
    Json j;
    const auto& p = c.problem;
    j["problem"] = {{"family", p.family},      {"beta", p.beta}, {"sensors", p.sensors}, {"input_seed", p.input_seed},
                    {"D", p.D},                {"k", p.k},       {"mu", p.mu},           {"m", p.m},
                    {"periodic_grf", {{"sigma", p.periodic.sigma}, {"tau", p.periodic.tau}, {"s", p.periodic.s},
                                      {"modes", p.periodic.modes}}}};
    const auto& b = c.basis;
    j["basis"] = {{"source", b.source}, {"weights", b.weights}, {"scales", b.scales}, {"dof", b.dof},
                  {"depth", b.depth},   {"width", b.width},     {"degree", b.degree}, {"seed", b.seed}};
    const auto& a = c.phase2.adapt;
    j["phase2"] = {{"enabled", c.phase2.enabled},
                   {"iterations", a.iterations},
                   {"lr", a.adam.lr},
                   {"rank", a.rank},
                   {"layers", a.layers},
                   {"fd_step", a.fd_step},
                   {"lambda_b", a.lambda_b ? Json(*a.lambda_b) : Json(nullptr)},
                   {"seed", a.seed},
                   {"log_every", a.log_every},
                   {"collocation", detail::counts_to_json(c.phase2.counts)}};
    j["collocation"] = c.collocation ? detail::counts_to_json(*c.collocation) : Json(nullptr);
    j["seed"] = c.seed;
    j["newton_steps"] = c.newton_steps;
    j["rcond"] = c.rcond;
    j["test_grid"] = {{"nx", c.test_nx}, {"nt", c.test_nt}};
    j["reference_grid"] = {{"nx", c.reference_nx}, {"nt", c.reference_nt}};
    j["output_dir"] = c.output_dir;
    j["threads"] = c.threads;
    return j;
}

inline ExperimentConfig config_from_json(const Json& j) {
    using detail::read_key;
    detail::reject_unknown(j, {"problem", "basis", "phase2", "collocation", "seed", "newton_steps", "rcond",
                               "test_grid", "reference_grid", "output_dir", "threads"},
                           "config");
    ExperimentConfig c;
    if (j.contains("problem")) {
        const auto& p = j["problem"];
        detail::reject_unknown(p, {"family", "beta", "sensors", "input_seed", "D", "k", "mu", "m", "periodic_grf"},
                               "problem");
        read_key(p, "family", c.problem.family);
        read_key(p, "beta", c.problem.beta);
        read_key(p, "sensors", c.problem.sensors);
        read_key(p, "input_seed", c.problem.input_seed);
        read_key(p, "D", c.problem.D);
        read_key(p, "k", c.problem.k);
        read_key(p, "mu", c.problem.mu);
        read_key(p, "m", c.problem.m);
        if (p.contains("periodic_grf")) {
            const auto& g = p["periodic_grf"];
            detail::reject_unknown(g, {"sigma", "tau", "s", "modes"}, "problem.periodic_grf");
            read_key(g, "sigma", c.problem.periodic.sigma);
            read_key(g, "tau", c.problem.periodic.tau);
            read_key(g, "s", c.problem.periodic.s);
            read_key(g, "modes", c.problem.periodic.modes);
        }
    }
    if (j.contains("basis")) {
        const auto& b = j["basis"];
        detail::reject_unknown(b, {"source", "weights", "scales", "dof", "depth", "width", "degree", "seed"}, "basis");
        read_key(b, "source", c.basis.source);
        read_key(b, "weights", c.basis.weights);
        read_key(b, "scales", c.basis.scales);
        read_key(b, "dof", c.basis.dof);
        read_key(b, "depth", c.basis.depth);
        read_key(b, "width", c.basis.width);
        read_key(b, "degree", c.basis.degree);
        read_key(b, "seed", c.basis.seed);
    }
    if (j.contains("phase2")) {
        const auto& p = j["phase2"];
        detail::reject_unknown(p, {"enabled", "iterations", "lr", "rank", "layers", "fd_step", "lambda_b", "seed",
                                   "log_every", "collocation"},
                               "phase2");
        auto& a = c.phase2.adapt;
        read_key(p, "enabled", c.phase2.enabled);
        read_key(p, "iterations", a.iterations);
        read_key(p, "lr", a.adam.lr);
        read_key(p, "rank", a.rank);
        read_key(p, "layers", a.layers);
        read_key(p, "fd_step", a.fd_step);
        read_key(p, "seed", a.seed);
        read_key(p, "log_every", a.log_every);
        if (p.contains("lambda_b") && !p["lambda_b"].is_null()) a.lambda_b = p["lambda_b"].get<double>();
        if (p.contains("collocation")) c.phase2.counts = detail::counts_from_json(p["collocation"], c.phase2.counts, "phase2.collocation");
    }
    if (j.contains("collocation") && !j["collocation"].is_null()) {
        c.collocation = detail::counts_from_json(j["collocation"], CollocationCounts{}, "collocation");
    }
    read_key(j, "seed", c.seed);
    read_key(j, "newton_steps", c.newton_steps);
    read_key(j, "rcond", c.rcond);
    read_key(j, "output_dir", c.output_dir);
    read_key(j, "threads", c.threads);
    if (j.contains("test_grid")) {
        detail::reject_unknown(j["test_grid"], {"nx", "nt"}, "test_grid");
        read_key(j["test_grid"], "nx", c.test_nx);
        read_key(j["test_grid"], "nt", c.test_nt);
    }
    if (j.contains("reference_grid")) {
        detail::reject_unknown(j["reference_grid"], {"nx", "nt"}, "reference_grid");
        read_key(j["reference_grid"], "nx", c.reference_nx);
        read_key(j["reference_grid"], "nt", c.reference_nt);
    }
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config " + path);
    try {
        return config_from_json(Json::parse(is));
    } catch (const Json::parse_error& e) {
        throw ConfigError(path + ": JSON parse error at byte " + std::to_string(e.byte));
    }
}

/// Default configurations of the four benchmark families.
inline ExperimentConfig preset(const std::string& name) {
    ExperimentConfig c;
    if (name == "example1") {
        c.problem.family = "advection";
    } else if (name == "example2") {
        c.problem.family = "diffusion_reaction";
    } else if (name == "example3") {
        c.problem.family = "burgers";
    } else if (name == "example4") {
        c.problem.family = "elliptic_interface";
        c.basis.depth = 2;
        c.basis.dof = 1000;
    } else {
        throw ConfigError("unknown preset '" + name + "' (expected example1..example4)");
    }
    return c;
}

// ---- problem instances ------------------------------------------------------

/// A concrete problem: PDE data, the input function as seen by an operator
/// net, a reference solution and the test points.
struct ProblemInstance {
    ProblemSpec spec;
    Vector input;                                              // sensor values of the input function
    std::function<Vector(std::span<const Point>)> reference;  // u_ref at points
    std::vector<Point> test_points;
};

inline std::vector<Point> tensor_grid(int nx, int nt, double lo, double hi) {
    if (nx < 2 || nt < 2) throw ConfigError("test grid needs at least 2 x 2 points");
    std::vector<Point> pts;
    pts.reserve(static_cast<std::size_t>(nx) * static_cast<std::size_t>(nt));
    for (int i = 0; i < nx; ++i) {
        for (int n = 0; n < nt; ++n) {
            pts.push_back(make_point(lo + (hi - lo) * i / (nx - 1), lo + (hi - lo) * n / (nt - 1)));
        }
    }
    return pts;
}

inline ProblemInstance make_instance(const ExperimentConfig& cfg) {
    const auto& p = cfg.problem;
    ProblemInstance inst;
    const bool interface = p.family == "elliptic_interface";
    const bool burgers = p.family == "burgers";
    const int def_test = burgers || interface ? 101 : 129;
    const int tnx = cfg.test_nx > 0 ? cfg.test_nx : def_test;
    const int tnt = cfg.test_nt > 0 ? cfg.test_nt : def_test;
    inst.test_points = interface ? tensor_grid(tnx, tnt, -1.0, 1.0) : tensor_grid(tnx, tnt, 0.0, 1.0);
    const int rnx = cfg.reference_nx > 0 ? cfg.reference_nx : (burgers ? 501 : 513);
    const int rnt = cfg.reference_nt > 0 ? cfg.reference_nt : (burgers ? 501 : 513);
    auto from_grid = [](std::shared_ptr<const GridSolution> g) {
        return [g](std::span<const Point> pts) { return g->at(pts); };
    };

    if (p.family == "advection" || p.family == "diffusion_reaction") {
        const Vector v = sample_rbf_grf(RbfGrf{p.beta, p.sensors}, 1, p.input_seed).front();
        if (p.family == "advection") {
            inst.input = to_coefficient(v);
            const GridFunction a(unit_grid(p.sensors), inst.input);
            inst.spec = make_advection([a](const Point& x) { return a(x[0]); });
            inst.reference = from_grid(std::make_shared<const GridSolution>(advection_reference(inst.input, rnx, rnt)));
        } else {
            inst.input = v;
            const GridFunction f(unit_grid(p.sensors), v);
            inst.spec = make_diffusion_reaction([f](const Point& x) { return f(x[0]); }, p.D, p.k);
            inst.reference =
                from_grid(std::make_shared<const GridSolution>(diffusion_reaction_reference(v, p.D, p.k, rnx, rnt)));
        }
    } else if (burgers) {
        const auto u0 = sample_periodic_grf(p.periodic, 1, p.input_seed).front();
        inst.input = u0.on_grid(unit_grid(p.sensors));
        inst.spec = make_burgers([u0](const Point& x) { return u0(x[0]); }, p.mu);
        ImplicitGrid grid;
        grid.nx = rnx;
        grid.nt = rnt;
        inst.reference = from_grid(
            std::make_shared<const GridSolution>(solve_burgers([u0](double x) { return u0(x); }, p.mu, grid)));
    } else if (interface) {
        inst.spec = make_interface_problem(p.m);
        const double m = p.m;
        inst.reference = [m](std::span<const Point> pts) {
            Vector u(static_cast<Eigen::Index>(pts.size()));
            for (std::size_t i = 0; i < pts.size(); ++i) u[static_cast<Eigen::Index>(i)] = interface_exact(m, pts[i]).u;
            return u;
        };
    } else {
        throw ConfigError("unknown problem family '" + p.family + "'");
    }
    return inst;
}

// ---- bases ------------------------------------------------------------------

struct BasisBundle {
    std::shared_ptr<const BasisSet> basis;
    std::shared_ptr<const BasisSet> basis2;  // interface problems
    std::optional<Vector> alpha0;            // branch output of a loaded DeepONet
    std::optional<MlpSpec> trunk;            // frozen trunk available for phase 2
    ScaleSet scales{{1.0}};
    [[nodiscard]] Eigen::Index dof() const { return basis->size() + (basis2 ? basis2->size() : 0); }
};

inline BasisBundle make_bundle(const ExperimentConfig& cfg, const ProblemInstance& inst, const CollocationSet& set) {
    const auto& b = cfg.basis;
    const bool interface = inst.spec.is_interface();
    BasisBundle out;
    std::vector<Point> sample;
    for (const auto& pt : set.interior) sample.push_back(pt.x);

    auto expand = [&](const MlpSpec& trunk) {
        if (b.scales == 1) return std::make_shared<const BasisSet>(make_trunk_basis(trunk));
        out.scales = compute_scale_set(trunk, b.scales, sample);
        return std::make_shared<const BasisSet>(make_scaled_union(trunk, out.scales));
    };

    if (b.source == "weights") {
        if (b.weights.empty()) throw ConfigError("basis.source 'weights' needs basis.weights (a .fbw.json path)");
        const auto wf = load_weights(b.weights);
        const auto trunks = trunks_of(wf.model);
        if (interface) {
            if (trunks.size() != 2) throw ConfigError("interface problems need an IONet weight file");
            out.basis = expand(trunks[0]);
            out.basis2 = expand(trunks[1]);
        } else {
            if (trunks.size() != 1) throw ConfigError("an IONet weight file only fits the interface family");
            out.basis = expand(trunks[0]);
            out.trunk = trunks[0];
            if (const auto* don = std::get_if<DeepOnet>(&wf.model)) {
                if (don->branch.input_dim() != inst.input.size()) {
                    throw ConfigError("DeepONet expects " + std::to_string(don->branch.input_dim()) +
                                      " sensor values, problem.sensors is " + std::to_string(inst.input.size()));
                }
                Vector a = Vector::Zero(out.basis->size());
                a.head(don->trunk.output_dim()) = don->branch_output(inst.input);
                out.alpha0 = std::move(a);
            }
        }
    } else if (b.source == "random_feature") {
        if (interface) {
            if (b.dof < 2) throw ConfigError("interface random features need dof >= 2");
            out.basis = std::make_shared<const BasisSet>(make_random_feature(b.depth, b.width, b.dof / 2, b.seed));
            out.basis2 =
                std::make_shared<const BasisSet>(make_random_feature(b.depth, b.width, b.dof - b.dof / 2, b.seed + 1));
        } else {
            out.basis = std::make_shared<const BasisSet>(make_random_feature(b.depth, b.width, b.dof, b.seed));
        }
    } else if (b.source == "polynomial") {
        if (b.degree < 0) throw ConfigError("polynomial degree must be >= 0");
        out.basis = std::make_shared<const BasisSet>(make_pascal_basis(b.degree));
        if (interface) out.basis2 = std::make_shared<const BasisSet>(make_pascal_basis(b.degree));
    } else {
        throw ConfigError("unknown basis.source '" + b.source + "' (weights | random_feature | polynomial)");
    }
    return out;
}

// ---- metrics and reports ----------------------------------------------------

struct ErrorReport {
    std::optional<double> rel_l2;  // unset when the reference vanishes on the test grid
    double l_inf = 0.0;
    std::size_t n_test = 0;
    double solve_time_s = 0.0;
    double assembly_time_s = 0.0;
    Eigen::Index dof = 0;
    SolveDiagnostics diagnostics;
};

inline ErrorReport compute_errors(const Vector& reference, const Vector& approx) {
    if (reference.size() != approx.size()) {
        throw DimensionError("reference and approximation differ in length");
    }
    ErrorReport r;
    r.n_test = static_cast<std::size_t>(reference.size());
    const Vector e = approx - reference;
    r.l_inf = e.size() > 0 ? e.cwiseAbs().maxCoeff() : 0.0;
    const double den = reference.squaredNorm();
    if (den > 0.0) r.rel_l2 = std::sqrt(e.squaredNorm() / den);
    return r;
}

inline ErrorReport compute_errors(const std::function<Vector(std::span<const Point>)>& reference, const Solution& sol,
                                  std::span<const Point> test_points) {
    auto r = compute_errors(reference(test_points), evaluate_solution(sol, test_points).values);
    r.solve_time_s = sol.diagnostics.solve_seconds;
    r.assembly_time_s = sol.diagnostics.assembly_seconds;
    r.dof = sol.alpha.size();
    r.diagnostics = sol.diagnostics;
    return r;
}

struct Timings {
    double reference_s = 0.0;
    double assembly_s = 0.0;
    double solve_s = 0.0;
    double phase2_s = 0.0;
    double total_s = 0.0;
};

struct ExperimentResult {
    ErrorReport report;
    Timings timings;
    Solution solution;
    std::optional<Solution> phase1;  // phase-1 solve preceding phase 2
    std::vector<Point> test_points;
    Vector reference;
    Vector approx;
    std::vector<TraceRow> trace;
    std::size_t ambiguous_points = 0;
};

namespace detail {

inline std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

inline std::ofstream open_out(const std::filesystem::path& p) {
    std::ofstream os(p);
    if (!os) throw ConfigError("cannot write " + p.string());
    return os;
}

template <typename Fn>
auto stage(const char* name, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const NumericalError& e) {
        throw NumericalError(std::string("stage '") + name + "': " + e.what());
    } catch (const DimensionError& e) {
        throw DimensionError(std::string("stage '") + name + "': " + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("stage '") + name + "': " + e.what());
    }
}

} // namespace detail

inline const char* kReportHeader =
    "family,basis,dof,seed,input_seed,n_test,rel_l2,l_inf,rank,residual_norm,newton_steps,phase2_iterations,"
    "ambiguous_points";

inline std::string report_row(const ExperimentConfig& cfg, const ExperimentResult& res) {
    const auto& r = res.report;
    std::ostringstream os;
    os << cfg.problem.family << ',' << cfg.basis.source << ',' << r.dof << ',' << cfg.seed << ','
       << cfg.problem.input_seed << ',' << r.n_test << ',' << (r.rel_l2 ? detail::fmt(*r.rel_l2) : "nan") << ','
       << detail::fmt(r.l_inf) << ',' << r.diagnostics.rank << ',' << detail::fmt(r.diagnostics.residual_norm) << ','
       << r.diagnostics.newton_steps << ',' << (cfg.phase2.enabled ? cfg.phase2.adapt.iterations : 0) << ','
       << res.ambiguous_points;
    return os.str();
}

/// report.csv (deterministic), timings.csv, solution.csv, pointwise_error.csv
/// and, with phase 2, phase2_trace.csv.
inline void write_artifacts(const ExperimentConfig& cfg, const ExperimentResult& res) {
    namespace fs = std::filesystem;
    const fs::path dir(cfg.output_dir);
    {
        auto os = detail::open_out(dir / "report.csv");
        os << kReportHeader << '\n' << report_row(cfg, res) << '\n';
    }
    {
        auto os = detail::open_out(dir / "timings.csv");
        const auto& t = res.timings;
        os << "reference_s,assembly_s,solve_s,phase2_s,total_s\n"
           << detail::fmt(t.reference_s) << ',' << detail::fmt(t.assembly_s) << ',' << detail::fmt(t.solve_s) << ','
           << detail::fmt(t.phase2_s) << ',' << detail::fmt(t.total_s) << '\n';
    }
    const bool interface = cfg.problem.family == "elliptic_interface";
    const char* second = interface ? "y" : "t";
    auto sol = detail::open_out(dir / "solution.csv");
    auto err = detail::open_out(dir / "pointwise_error.csv");
    sol << "x," << second << ",u_ref,u\n";
    err << "x," << second << ",abs_error\n";
    for (std::size_t p = 0; p < res.test_points.size(); ++p) {
        const auto i = static_cast<Eigen::Index>(p);
        const auto& x = res.test_points[p];
        sol << detail::fmt(x[0]) << ',' << detail::fmt(x[1]) << ',' << detail::fmt(res.reference[i]) << ','
            << detail::fmt(res.approx[i]) << '\n';
        err << detail::fmt(x[0]) << ',' << detail::fmt(x[1]) << ',' << detail::fmt(std::abs(res.approx[i] - res.reference[i]))
            << '\n';
    }
    if (!res.trace.empty()) write_trace_csv((dir / "phase2_trace.csv").string(), res.trace);
}

/// sample -> assemble -> solve (-> phase 2 -> re-solve) -> evaluate -> report.
/// Artifacts are written when cfg.output_dir is set; config.echo.json is
/// written before any stage runs.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    if (cfg.newton_steps < 1) throw ConfigError("newton_steps must be >= 1");
    if (cfg.threads < 1) throw ConfigError("threads must be >= 1");
    if (!cfg.output_dir.empty()) {
        std::filesystem::create_directories(cfg.output_dir);
        auto os = detail::open_out(std::filesystem::path(cfg.output_dir) / "config.echo.json");
        os << to_json(cfg).dump(2) << '\n';
    }
    ExperimentResult res;
    const auto inst = detail::stage("problem", [&] { return make_instance(cfg); });
    res.timings.reference_s = std::chrono::duration<double>(clock::now() - t0).count();
    const auto counts = cfg.collocation ? *cfg.collocation : CollocationCounts::defaults_for(inst.spec);
    const auto set = detail::stage("sample", [&] { return sample_collocation(inst.spec, counts, cfg.seed); });
    const auto bundle = detail::stage("basis", [&] { return make_bundle(cfg, inst, set); });
    const NewtonOptions opts{cfg.newton_steps, cfg.rcond, cfg.threads};

    Solution sol = detail::stage("solve", [&] {
        if (bundle.basis2) return fit_interface(inst.spec, bundle.basis, bundle.basis2, set, {cfg.rcond, cfg.threads});
        return fit(inst.spec, bundle.basis, set, opts, bundle.alpha0);
    });
    res.timings.assembly_s += sol.diagnostics.assembly_seconds;
    res.timings.solve_s += sol.diagnostics.solve_seconds;

    if (cfg.phase2.enabled) {
        const auto p2 = clock::now();
        if (!bundle.trunk) throw ConfigError("phase 2 needs a single-domain trunk from a weight file");
        const auto adapted = detail::stage("phase2", [&] {
            const auto sub = sample_collocation(inst.spec, cfg.phase2.counts, cfg.seed + 1);
            return adapt_trunk(*bundle.trunk, inst.spec, sub, cfg.phase2.adapt, sol.alpha, bundle.scales);
        });
        res.trace = adapted.trace;
        res.phase1 = sol;
        res.timings.phase2_s = std::chrono::duration<double>(clock::now() - p2).count();
        sol = detail::stage("finalize", [&] { return finalize(adapted, inst.spec, set, opts); });
        res.timings.assembly_s += sol.diagnostics.assembly_seconds;
        res.timings.solve_s += sol.diagnostics.solve_seconds;
    }

    detail::stage("evaluate", [&] {
        res.test_points = inst.test_points;
        res.reference = inst.reference(res.test_points);
        const auto ev = evaluate_solution(sol, res.test_points);
        res.approx = ev.values;
        res.ambiguous_points = ev.ambiguous;
        res.report = compute_errors(res.reference, res.approx);
        res.report.dof = bundle.dof();
        res.report.diagnostics = sol.diagnostics;
        res.report.solve_time_s = res.timings.solve_s;
        res.report.assembly_time_s = res.timings.assembly_s;
        return 0;
    });
    res.solution = std::move(sol);
    res.timings.total_s = std::chrono::duration<double>(clock::now() - t0).count();
    if (!cfg.output_dir.empty()) write_artifacts(cfg, res);
    return res;
}

// ---- sweeps -----------------------------------------------------------------

struct SweepRow {
    std::string axis;
    double value = 0.0;
    int repeats = 0;
    int failures = 0;
    double rel_l2_mean = std::numeric_limits<double>::quiet_NaN();
    double rel_l2_std = std::numeric_limits<double>::quiet_NaN();
    double l_inf_mean = std::numeric_limits<double>::quiet_NaN();
    double l_inf_std = std::numeric_limits<double>::quiet_NaN();
    std::string error;  // last failure message
};

inline void apply_axis(ExperimentConfig& cfg, const std::string& axis, double v) {
    auto as_int = [&] {
        if (v != std::floor(v)) throw ConfigError("sweep axis '" + axis + "' needs integer values");
        return static_cast<int>(v);
    };
    if (axis == "dof") cfg.basis.dof = as_int();
    else if (axis == "beta") cfg.problem.beta = v;
    else if (axis == "m") cfg.problem.m = v;
    else if (axis == "mu") cfg.problem.mu = v;
    else if (axis == "scales") cfg.basis.scales = as_int();
    else if (axis == "rank") cfg.phase2.adapt.rank = as_int();
    else if (axis == "layers") cfg.phase2.adapt.layers = static_cast<std::size_t>(as_int());
    else throw ConfigError("unknown sweep axis '" + axis + "' (dof | beta | m | mu | scales | rank | layers)");
}

/// One row per value; repeat r shifts the collocation, basis and phase-2
/// seeds by r. Failing runs are counted and the sweep continues.
inline std::vector<SweepRow> run_sweep(const ExperimentConfig& base, const std::string& axis,
                                       const std::vector<double>& values, int repeats = 1) {
    if (values.empty()) throw ConfigError("sweep needs at least one value");
    if (repeats < 1) throw ConfigError("sweep repeats must be >= 1");
    {
        ExperimentConfig probe = base;
        apply_axis(probe, axis, values.front());
    }
    std::vector<SweepRow> rows;
    for (double v : values) {
        SweepRow row;
        row.axis = axis;
        row.value = v;
        row.repeats = repeats;
        std::vector<double> rel, linf;
        for (int r = 0; r < repeats; ++r) {
            ExperimentConfig cfg = base;
            cfg.output_dir.clear();
            apply_axis(cfg, axis, v);
            cfg.seed += static_cast<std::uint64_t>(r);
            cfg.basis.seed += static_cast<std::uint64_t>(r);
            cfg.phase2.adapt.seed += static_cast<std::uint64_t>(r);
            try {
                const auto res = run_experiment(cfg);
                if (res.report.rel_l2) rel.push_back(*res.report.rel_l2);
                linf.push_back(res.report.l_inf);
            } catch (const Error& e) {
                ++row.failures;
                row.error = e.what();
            }
        }
        auto stats = [](const std::vector<double>& x, double& mean, double& sd) {
            if (x.empty()) return;
            mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
            double s = 0.0;
            for (double e : x) s += (e - mean) * (e - mean);
            sd = x.size() > 1 ? std::sqrt(s / static_cast<double>(x.size() - 1)) : 0.0;
        };
        stats(rel, row.rel_l2_mean, row.rel_l2_std);
        stats(linf, row.l_inf_mean, row.l_inf_std);
        rows.push_back(std::move(row));
    }
    return rows;
}

inline void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
    auto os = detail::open_out(path);
    os << "axis,value,repeats,failures,rel_l2_mean,rel_l2_std,l_inf_mean,l_inf_std,error\n";
    for (const auto& r : rows) {
        std::string err = r.error;
        std::replace(err.begin(), err.end(), ',', ';');
        std::replace(err.begin(), err.end(), '\n', ' ');
        os << r.axis << ',' << detail::fmt(r.value) << ',' << r.repeats << ',' << r.failures << ','
           << detail::fmt(r.rel_l2_mean) << ',' << detail::fmt(r.rel_l2_std) << ',' << detail::fmt(r.l_inf_mean) << ','
           << detail::fmt(r.l_inf_std) << ',' << err << '\n';
    }
}

// ---- pre-training presets -----------------------------------------------------

struct PretrainConfig {
    std::string preset = "example2";
    DatasetConfig data;
    InterfaceDatasetConfig interface_data;
    TrainConfig train;
    int depth = 5;
    int width = 50;
    double D = 0.01;
    double k = 0.01;
    double mu = 0.01;
    PeriodicGrf periodic;
};

/// Desk-scale defaults per benchmark family.
inline PretrainConfig pretrain_defaults(const std::string& preset) {
    PretrainConfig c;
    c.preset = preset;
    c.train.epochs = preset == "example1" ? 600 : 400;
    c.train.adam.lr = 2e-3;
    c.train.final_lr_fraction = 0.05;
    if (preset == "example4") c.depth = 4;
    else if (preset != "example1" && preset != "example2" && preset != "example3") {
        throw ConfigError("unknown pretrain preset '" + preset + "' (example1..example4)");
    }
    return c;
}

inline PretrainConfig pretrain_config_from_json(const Json& j, PretrainConfig c = {}) {
    using detail::read_key;
    detail::reject_unknown(j, {"preset", "samples", "epochs", "batch_size", "lr", "final_lr_fraction", "seed",
                               "normalize", "depth", "width", "points_per_sample", "beta", "sensors", "oracle_nx",
                               "oracle_nt", "D", "k", "mu", "m_min", "m_max", "sensor_grid", "threads"},
                           "pretrain config");
    read_key(j, "preset", c.preset);
    read_key(j, "samples", c.train.samples);
    read_key(j, "epochs", c.train.epochs);
    read_key(j, "batch_size", c.train.batch_size);
    read_key(j, "lr", c.train.adam.lr);
    read_key(j, "final_lr_fraction", c.train.final_lr_fraction);
    read_key(j, "seed", c.train.seed);
    read_key(j, "normalize", c.train.normalize);
    read_key(j, "depth", c.depth);
    read_key(j, "width", c.width);
    read_key(j, "points_per_sample", c.data.points_per_sample);
    read_key(j, "beta", c.data.grf.length_scale);
    read_key(j, "sensors", c.data.grf.sensors);
    read_key(j, "oracle_nx", c.data.oracle_nx);
    read_key(j, "oracle_nt", c.data.oracle_nt);
    read_key(j, "threads", c.data.threads);
    read_key(j, "D", c.D);
    read_key(j, "k", c.k);
    read_key(j, "mu", c.mu);
    read_key(j, "m_min", c.interface_data.m_min);
    read_key(j, "m_max", c.interface_data.m_max);
    read_key(j, "sensor_grid", c.interface_data.sensor_grid);
    c.interface_data.points_per_sample = c.data.points_per_sample;
    c.data.seed = c.train.seed;
    c.interface_data.seed = c.train.seed;
    return c;
}

struct PretrainResult {
    WeightFile weights;
    std::vector<double> trace;
    double train_rel_l2 = 0.0;
    bool aborted = false;
};

/// Desk-scale supervised pre-training for a benchmark family; the returned
/// weight file carries the training setup in its metadata.
inline PretrainResult pretrain_preset(const PretrainConfig& cfg) {
    PretrainResult out;
    Rng rng(cfg.train.seed);
    Json meta{{"preset", cfg.preset},       {"samples", cfg.train.samples}, {"epochs", cfg.train.epochs},
              {"batch_size", cfg.train.batch_size}, {"lr", cfg.train.adam.lr}, {"seed", cfg.train.seed},
              {"final_lr_fraction", cfg.train.final_lr_fraction}};
    if (cfg.preset == "example4") {
        auto dc = cfg.interface_data;
        dc.samples = cfg.train.samples;
        const auto data = make_interface_dataset(dc);
        const auto [s1, s2] = interface_sensors(dc.sensor_grid, {});
        auto r = train_ionet(init_ionet(s1, s2, cfg.depth, cfg.width, rng), data, cfg.train);
        out.train_rel_l2 = dataset_rel_l2(r.model, data);
        out.weights.model = std::move(r.model);
        out.trace = std::move(r.trace);
        out.aborted = r.aborted;
        meta["m_range"] = {dc.m_min, dc.m_max};
    } else {
        auto dc = cfg.data;
        dc.samples = cfg.train.samples;
        Dataset data;
        if (cfg.preset == "example1") data = make_advection_dataset(dc);
        else if (cfg.preset == "example2") data = make_diffusion_reaction_dataset(dc, cfg.D, cfg.k);
        else if (cfg.preset == "example3") data = make_burgers_dataset(dc, cfg.periodic, cfg.mu);
        else throw ConfigError("unknown pretrain preset '" + cfg.preset + "' (example1..example4)");
        auto r = train_deeponet(init_deeponet(sensor_points(unit_grid(dc.grf.sensors)), 2, cfg.depth, cfg.width, rng),
                                data, cfg.train);
        out.train_rel_l2 = dataset_rel_l2(r.model, data);
        out.weights.model = std::move(r.model);
        out.trace = std::move(r.trace);
        out.aborted = r.aborted;
        meta["beta"] = dc.grf.length_scale;
    }
    meta["train_rel_l2"] = out.train_rel_l2;
    out.weights.metadata = std::move(meta);
    return out;
}

} // namespace ftopinn
