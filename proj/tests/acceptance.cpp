// Acceptance gate: one PASS/FAIL line per criterion. `--only N[,M...]` runs a
// subset; the exit status is nonzero when any selected criterion fails.

#include "convergence.hpp"
#include "support.hpp"

#include "ftopinn/ftopinn.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <set>
#include <sstream>

using namespace ftopinn;
namespace fs = std::filesystem;

#ifndef FTOPINN_CLI_PATH
#define FTOPINN_CLI_PATH "ftopinn"
#endif

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string num(double v) {
    std::ostringstream os;
    os << std::setprecision(3) << v;
    return os.str();
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

fs::path workdir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("ftopinn_acceptance_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::vector<Point> square_grid(int n, double lo, double hi) {
    std::vector<Point> pts;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) pts.push_back(make_point(lo + (hi - lo) * i / (n - 1), lo + (hi - lo) * j / (n - 1)));
    return pts;
}

std::shared_ptr<const BasisSet> exact_first(std::function<Jet2(const Point&)> exact, BasisSet rest) {
    basis_kind::Explicit ex;
    ex.members.push_back(std::move(exact));
    std::vector<BasisSet> parts;
    parts.emplace_back(ex);
    parts.push_back(std::move(rest));
    return std::make_shared<const BasisSet>(concat_bases(std::move(parts)));
}

// Advection with a = 1, initial sin(pi x) and inflow sin(pi t / 2).
Jet2 advection_exact(const Point& p) {
    const double s = p[0] - p[1];
    const bool ahead = s >= 0.0;
    const double w = ahead ? kPi : -0.5 * kPi;
    Jet2 j(2);
    j.value = std::sin(w * s);
    const double d = w * std::cos(w * s);
    const double dd = -w * w * j.value;
    j.grad << d, -d;
    j.hess << dd, -dd, -dd, dd;
    return j;
}

Outcome jets() {
    Rng rng(101);
    std::vector<BasisSet> kinds;
    kinds.push_back(make_trunk_basis(test::random_mlp({2, 20, 20, 15}, rng, 1.5)));
    kinds.push_back(make_scaled_union(test::random_mlp({2, 16, 16, 8}, rng), ScaleSet{{1.0, 0.1, 0.4}}));
    kinds.push_back(make_random_feature(3, 40, 30, 17));
    kinds.push_back(make_pascal_basis(6));
    const auto net = test::random_mlp({2, 12, 12, 10}, rng);
    auto lora = init_lora(net, 2, 2, rng);
    std::normal_distribution<double> g(0.0, 0.3);
    for (auto& ad : lora.adapters) ad.B = Matrix::NullaryExpr(ad.B.rows(), ad.B.cols(), [&] { return g(rng); });
    kinds.push_back(make_lora_trunk(net, lora));
    {
        basis_kind::Explicit ex;
        ex.members.push_back(advection_exact);
        std::vector<BasisSet> parts;
        parts.emplace_back(ex);
        parts.push_back(make_pascal_basis(2));
        kinds.push_back(concat_bases(std::move(parts)));
    }
    std::uniform_real_distribution<double> u(0.05, 0.95);
    double worst = 0.0;
    for (int pair = 0; pair < 100; ++pair) {
        const auto& b = kinds[static_cast<std::size_t>(pair) % kinds.size()];
        Point x = make_point(u(rng), u(rng));
        if (pair % kinds.size() == 5 && std::abs(x[0] - x[1]) < 0.05) x[1] = x[0] - 0.1;  // stay off the kink
        const auto c = test::check_jets(b, x);
        worst = std::max({worst, c.grad_error, c.hess_error});
    }
    return {worst < 1e-6, "max rel error " + num(worst) + " over 100 pairs, " + std::to_string(kinds.size()) + " kinds"};
}

Outcome unit_rows() {
    Rng rng(102);
    const auto trunk = make_trunk_basis(test::random_mlp({2, 20, 20, 30}, rng));
    double worst = 0.0;
    std::size_t rows = 0;
    auto check = [&](const WeightedSystem& sys) {
        const Vector n = sys.weighted_A().rowwise().norm();
        worst = std::max(worst, (n.array() - 1.0).abs().maxCoeff());
        rows += static_cast<std::size_t>(sys.rows());
    };
    const auto adv = make_advection([](const Point& x) { return 1.0 + 0.5 * std::sin(5 * x[0]); });
    check(assemble(adv, trunk, sample_collocation(adv, {400, 200, 200, 0}, 1)));
    const Vector alpha = Vector::Constant(trunk.size(), 0.1);
    const auto dr = make_diffusion_reaction([](const Point& x) { return std::cos(3 * x[0]); });
    check(assemble_linearized(dr, evaluate_collocation(trunk, sample_collocation(dr, {400, 200, 200, 0}, 2)), alpha));
    const auto bu = make_burgers([](const Point& x) { return std::sin(2 * kPi * x[0]); });
    check(assemble_linearized(bu, evaluate_collocation(trunk, sample_collocation(bu, {400, 100, 51, 0}, 3)), alpha));
    const auto ip = make_interface_problem(1.0);
    const auto rf = make_random_feature(2, 30, 20, 4);
    check(assemble_interface(ip, evaluate_collocation(trunk, sample_collocation(ip, {400, 200, 0, 200}, 4), &rf)));
    return {worst <= 1e-12, "max | ||row|| - 1 | = " + num(worst) + " over " + std::to_string(rows) + " rows, 4 families"};
}

Outcome manufactured_span() {
    const auto adv = make_advection([](const Point&) { return 1.0; });
    const auto sol = fit(adv, exact_first(advection_exact, make_pascal_basis(3)),
                         sample_collocation(adv, CollocationCounts::defaults_for(adv), 1));
    const auto grid = square_grid(129, 0.0, 1.0);
    Vector ref(static_cast<Eigen::Index>(grid.size()));
    for (std::size_t i = 0; i < grid.size(); ++i) ref[static_cast<Eigen::Index>(i)] = advection_exact(grid[i]).value;
    const double e_adv = *compute_errors(ref, evaluate_solution(sol, grid).values).rel_l2;

    const auto ip = make_interface_problem(1.0);
    const auto b1 = exact_first([](const Point& x) { return interface_branch_jet(1.0, 1.0, x); }, make_pascal_basis(3));
    const auto b2 = exact_first([](const Point& x) { return interface_branch_jet(1.0, 2.0, x); }, make_pascal_basis(3));
    const auto isol = fit_interface(ip, b1, b2, sample_collocation(ip, CollocationCounts::defaults_for(ip), 2));
    const auto igrid = square_grid(101, -1.0, 1.0);
    Vector iref(static_cast<Eigen::Index>(igrid.size()));
    for (std::size_t i = 0; i < igrid.size(); ++i) iref[static_cast<Eigen::Index>(i)] = interface_exact(1.0, igrid[i]).u;
    const double e_if = *compute_errors(iref, evaluate_solution(isol, igrid).values).rel_l2;
    return {e_adv < 1e-8 && e_if < 1e-8, "advection " + num(e_adv) + ", interface " + num(e_if)};
}

Outcome newton_linear() {
    Rng rng(104);
    const auto problem = make_advection([](const Point& x) { return 1.0 + x[0]; });
    const auto basis = std::make_shared<const BasisSet>(make_trunk_basis(test::random_mlp({2, 20, 40}, rng)));
    const auto set = sample_collocation(problem, {400, 200, 200, 0}, 2);
    const auto direct = fit_linear(problem, basis, set);
    std::normal_distribution<double> g(0.0, 1.0);
    const Vector alpha0 = Vector::NullaryExpr(basis->size(), [&] { return g(rng); });
    const auto newton = newton_llsq(problem, basis, set, alpha0, {1, 1e-10, 1});
    const auto grid = square_grid(41, 0.0, 1.0);
    const double d =
        (evaluate_solution(direct, grid).values - evaluate_solution(newton, grid).values).cwiseAbs().maxCoeff();
    return {d <= 1e-10, "max |u_newton - u_llsq| = " + num(d)};
}

Outcome monotone_residual() {
    Rng rng(105);
    std::normal_distribution<double> g(0.0, 1.0);
    int violations = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const Eigen::Index n = 40 + trial, k = 5 + trial % 20;
        const Matrix A = Matrix::NullaryExpr(n, k + 6, [&] { return g(rng); });
        const Vector b = Vector::NullaryExpr(n, [&] { return g(rng); });
        const Vector rho = Vector::NullaryExpr(n, [&] { return 0.1 + std::abs(g(rng)); });
        const double small = solve_llsq({A.leftCols(k), b, rho, {}}).diagnostics.residual_norm;
        const double big = solve_llsq({A, b, rho, {}}).diagnostics.residual_norm;
        if (big > small * (1 + 1e-12) + 1e-14) ++violations;
    }
    const auto trunk_net = test::random_mlp({2, 20, 20, 15}, rng);
    const auto problem = make_advection([](const Point& x) { return 1.0 + 0.5 * std::sin(4 * x[0]); });
    const auto set = sample_collocation(problem, {600, 300, 300, 0}, 5);
    const auto trunk = make_trunk_basis(trunk_net);
    const auto su = make_scaled_union(trunk_net, ScaleSet{{1.0, 0.3}});
    const auto st = assemble(problem, trunk, set);
    const auto su_sys = assemble(problem, su, set);
    const auto I = trunk.size();
    const bool ordered = (su_sys.A.leftCols(I) - st.A).cwiseAbs().maxCoeff() == 0.0;
    Matrix joined(st.rows(), su_sys.cols());
    joined << st.A, su_sys.A.rightCols(su_sys.cols() - I);
    const double r_trunk = solve_llsq(st).diagnostics.residual_norm;
    const double r_union = solve_llsq({joined, st.b, st.rho, st.group}).diagnostics.residual_norm;
    const bool ok = violations == 0 && ordered && r_union <= r_trunk * (1 + 1e-12);
    return {ok, std::to_string(violations) + "/50 random violations; trunk " + num(r_trunk) + " >= union(J=2) " +
                    num(r_union)};
}

Outcome rwm_diffusion_reaction() {
    std::vector<double> errs;
    for (int s = 0; s < 10; ++s) {
        auto c = preset("example2");
        c.basis.dof = 500;
        c.basis.depth = 3;
        c.basis.seed = static_cast<std::uint64_t>(s);
        c.problem.input_seed = 500 + static_cast<std::uint64_t>(s);
        c.seed = static_cast<std::uint64_t>(s);
        c.newton_steps = 1;
        errs.push_back(*run_experiment(c).report.rel_l2);
    }
    const double med = median(errs);
    return {med <= 5e-2, "median rel L2 " + num(med) + " (max " + num(*std::max_element(errs.begin(), errs.end())) + ")"};
}

Outcome pretrained_diffusion_reaction() {
    const auto dir = workdir("c7");
    auto pc = pretrain_defaults("example2");
    pc.data.seed = pc.train.seed = 7;
    const auto pre = pretrain_preset(pc);
    const auto path = (dir / "model.fbw.json").string();
    save_weights(pre.weights, path);
    const auto& model = std::get<DeepOnet>(pre.weights.model);

    int bad = 0;
    double worst_ratio = 0.0, worst_abs = 0.0;
    std::vector<double> raw_errs, fit_errs;
    for (int s = 0; s < 10; ++s) {
        auto c = preset("example2");
        c.basis.source = "weights";
        c.basis.weights = path;
        c.basis.scales = 3;
        c.problem.input_seed = 700 + static_cast<std::uint64_t>(s);
        c.seed = static_cast<std::uint64_t>(s);
        const auto res = run_experiment(c);
        const auto inst = make_instance(c);
        const double raw = *compute_errors(res.reference, model.predict(inst.input, res.test_points)).rel_l2;
        const double fto = *res.report.rel_l2;
        raw_errs.push_back(raw);
        fit_errs.push_back(fto);
        worst_ratio = std::max(worst_ratio, fto / raw);
        worst_abs = std::max(worst_abs, fto);
        if (!(fto <= 0.5 * raw && fto <= 1e-2)) ++bad;
    }
    return {bad == 0, "raw median " + num(median(raw_errs)) + ", phase-1 median " + num(median(fit_errs)) +
                          ", worst ratio " + num(worst_ratio) + ", worst phase-1 " + num(worst_abs)};
}

Outcome interface_problem() {
    auto c = preset("example4");
    c.problem.m = 1.0;
    c.basis.dof = 1000;
    const auto r = run_experiment(c);
    return {*r.report.rel_l2 <= 1e-3, "random-feature DOF 1000: rel L2 " + num(*r.report.rel_l2)};
}

Outcome phase2_out_of_distribution() {
    const auto dir = workdir("c9");
    const auto pc = pretrain_defaults("example1");
    const auto path = (dir / "model.fbw.json").string();
    save_weights(pretrain_preset(pc).weights, path);
    std::vector<double> p1, p2;
    bool every = true;
    int rising_windows = 0;
    for (int s = 0; s < 5; ++s) {
        auto c = preset("example1");
        c.problem.beta = 0.025;
        c.problem.input_seed = 100 + static_cast<std::uint64_t>(s);
        c.basis.source = "weights";
        c.basis.weights = path;
        c.phase2.enabled = true;
        c.phase2.adapt.iterations = 2000;
        c.phase2.adapt.rank = 5;
        c.phase2.adapt.layers = 5;
        c.phase2.adapt.seed = static_cast<std::uint64_t>(s);
        const auto r = run_experiment(c);
        const double before = *compute_errors(r.reference, evaluate_solution(*r.phase1, r.test_points).values).rel_l2;
        const double after = *r.report.rel_l2;
        p1.push_back(before);
        p2.push_back(after);
        every = every && after <= before;
        const double lb = c.phase2.adapt.lambda_b.value_or(10.0);
        for (std::size_t i = 0; i + 500 < r.trace.size(); ++i) {
            const auto& a = r.trace[i];
            const auto& b = r.trace[i + 500];
            if (b.loss_d + lb * b.loss_b > a.loss_d + lb * a.loss_b) ++rising_windows;
        }
    }
    const bool ok = every && median(p2) < median(p1);
    std::string detail = "phase-1 median " + num(median(p1)) + " -> phase-2 median " + num(median(p2)) + " [";
    for (std::size_t i = 0; i < p1.size(); ++i) detail += (i ? " " : "") + num(p1[i]) + "->" + num(p2[i]);
    return {ok, detail + "], rising 500-step loss windows " + std::to_string(rising_windows)};
}

Outcome oracle_orders() {
    const auto lw = test::lax_wendroff_orders();
    const auto cn = test::diffusion_reaction_orders();
    const auto bu = test::burgers_orders();
    const double lo = std::min({lw[0], lw[1], cn[0], cn[1], bu[0], bu[1]});
    return {lo >= 1.7, "orders LW " + num(lw[0]) + "/" + num(lw[1]) + ", CN " + num(cn[0]) + "/" + num(cn[1]) +
                           ", Burgers " + num(bu[0]) + "/" + num(bu[1])};
}

Outcome grf_statistics() {
    const RbfGrf spec{0.1, 50};
    const int n = 20000;
    const auto samples = sample_rbf_grf(spec, n, 11u);
    const Vector x = unit_grid(spec.sensors);
    const std::array<std::pair<int, int>, 5> pairs{{{0, 0}, {10, 12}, {20, 25}, {3, 40}, {30, 31}}};
    double worst = 0.0;
    for (const auto& [i, j] : pairs) {
        double mi = 0.0, mj = 0.0;
        for (const auto& v : samples) {
            mi += v[i];
            mj += v[j];
        }
        mi /= n;
        mj /= n;
        std::vector<double> prod;
        prod.reserve(n);
        for (const auto& v : samples) prod.push_back((v[i] - mi) * (v[j] - mj));
        const double cov = std::accumulate(prod.begin(), prod.end(), 0.0) / (n - 1);
        double var = 0.0;
        for (double p : prod) var += (p - cov) * (p - cov);
        const double se = std::sqrt(var / (n - 1) / n);
        worst = std::max(worst, std::abs(cov - rbf_kernel(x[i], x[j], spec.length_scale)) / se);
    }
    bool endpoints = true;
    for (const auto& f : sample_periodic_grf(PeriodicGrf{}, 200, 12u)) endpoints = endpoints && f(0.0) == f(1.0);
    return {worst <= 3.0 && endpoints,
            "worst |cov - k| = " + num(worst) + " SE; periodic endpoints " + (endpoints ? "equal" : "differ")};
}

Outcome determinism() {
    const auto dir = workdir("c12");
    auto run = [&](const std::string& preset_name, const std::string& extra, const std::string& out) {
        const std::string cmd = std::string("\"") + FTOPINN_CLI_PATH + "\" solve --preset " + preset_name + extra +
                                " --threads 1 --seed 5 --out-dir \"" + (dir / out).string() + "\" > /dev/null";
        return std::system(cmd.c_str());
    };
    auto slurp = [](const fs::path& p) {
        std::ifstream is(p, std::ios::binary);
        std::stringstream ss;
        ss << is.rdbuf();
        return ss.str();
    };
    std::string detail;
    bool ok = true;
    for (const auto& [name, extra] : std::vector<std::pair<std::string, std::string>>{
             {"example1", " --dof 300"}, {"example2", " --dof 300"}, {"example4", " --dof 400"}}) {
        const int a = run(name, extra, name + "_a");
        const int b = run(name, extra, name + "_b");
        const auto ra = slurp(dir / (name + "_a") / "report.csv");
        const bool same = a == 0 && b == 0 && !ra.empty() && ra == slurp(dir / (name + "_b") / "report.csv") &&
                          slurp(dir / (name + "_a") / "solution.csv") == slurp(dir / (name + "_b") / "solution.csv");
        ok = ok && same;
        detail += name + (same ? " identical; " : " DIFFERENT; ");
    }
    return {ok, detail + "CLI " + FTOPINN_CLI_PATH};
}

} // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    for (int i = 1; i + 1 < argc; ++i) {
        if (std::string(argv[i]) == "--only") {
            std::stringstream ss(argv[i + 1]);
            std::string item;
            while (std::getline(ss, item, ',')) only.insert(std::stoi(item));
        }
    }
    struct Criterion {
        int id;
        const char* name;
        double budget_s;  // 0: no runtime bound
        Outcome (*run)();
    };
    const std::vector<Criterion> all{
        {1, "jet correctness", 10, jets},
        {2, "unit-norm weighted rows", 0, unit_rows},
        {3, "manufactured span recovery", 30, manufactured_span},
        {4, "Newton step on linear problem", 0, newton_linear},
        {5, "residual monotone in columns", 0, monotone_residual},
        {6, "random features, diffusion-reaction", 300, rwm_diffusion_reaction},
        {7, "pretrained DeepONet improved by phase 1", 1200, pretrained_diffusion_reaction},
        {8, "interface problem m=1", 300, interface_problem},
        {9, "phase 2 out of distribution", 1800, phase2_out_of_distribution},
        {10, "oracle convergence orders", 300, oracle_orders},
        {11, "GRF statistics", 0, grf_statistics},
        {12, "determinism of solve reports", 0, determinism},
    };
    int failed = 0;
    for (const auto& c : all) {
        if (!only.empty() && !only.contains(c.id)) continue;
        detail::Stopwatch sw;
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double t = sw.seconds();
        const bool in_time = c.budget_s == 0 || t < c.budget_s;
        if (!in_time) o.detail += "; over the " + num(c.budget_s) + " s budget";
        const bool pass = o.pass && in_time;
        failed += pass ? 0 : 1;
        std::printf("criterion %2d %-42s %s  %s (%.1f s)\n", c.id, c.name, pass ? "PASS" : "FAIL", o.detail.c_str(), t);
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
