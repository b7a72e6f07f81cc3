#include "ftopinn/ftopinn.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace ftopinn;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    int threads = 1;
    std::string out_dir = "out";
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config, "JSON configuration file");
    app->add_option("--seed", c.seed, "Random seed");
    app->add_option("--threads", c.threads, "Worker threads")->check(CLI::PositiveNumber);
    app->add_option("--out-dir", c.out_dir, "Output directory");
}

Json read_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open " + path);
    try {
        return Json::parse(is);
    } catch (const Json::parse_error& e) {
        throw ConfigError(path + ": JSON parse error at byte " + std::to_string(e.byte));
    }
}

struct SolveArgs {
    std::string preset;
    std::string weights;
    std::optional<int> dof, scales;
    std::optional<double> beta, m, mu;
    std::optional<std::uint64_t> input_seed;
    bool phase2 = false;
};

void add_solve_options(CLI::App* app, SolveArgs& a) {
    app->add_option("--preset", a.preset, "example1 | example2 | example3 | example4");
    app->add_option("--weights", a.weights, "Pretrained .fbw.json file supplying the trunk basis");
    app->add_option("--dof", a.dof, "Random-feature DOF");
    app->add_option("--scales", a.scales, "Scaled-union size J");
    app->add_option("--beta", a.beta, "GRF length scale of the input function");
    app->add_option("--m", a.m, "Interface problem parameter");
    app->add_option("--mu", a.mu, "Burgers viscosity");
    app->add_option("--input-seed", a.input_seed, "Seed of the input function draw");
    app->add_flag("--phase2", a.phase2, "Run the LoRA phase before the final solve");
}

ExperimentConfig build_config(const Common& c, const SolveArgs& a) {
    if (!c.config.empty() && !a.preset.empty()) throw ConfigError("give either --config or --preset, not both");
    ExperimentConfig cfg = c.config.empty() ? preset(a.preset.empty() ? "example1" : a.preset) : load_config(c.config);
    if (!a.weights.empty()) {
        cfg.basis.source = "weights";
        cfg.basis.weights = a.weights;
    }
    if (a.dof) cfg.basis.dof = *a.dof;
    if (a.scales) cfg.basis.scales = *a.scales;
    if (a.beta) cfg.problem.beta = *a.beta;
    if (a.m) cfg.problem.m = *a.m;
    if (a.mu) cfg.problem.mu = *a.mu;
    if (a.input_seed) cfg.problem.input_seed = *a.input_seed;
    if (a.phase2) cfg.phase2.enabled = true;
    if (c.seed) cfg.seed = *c.seed;
    cfg.threads = c.threads;
    cfg.output_dir = c.out_dir;
    return cfg;
}

std::vector<double> parse_values(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError("sweep value '" + item + "' is not a number");
        }
    }
    return out;
}

void print_report(const ExperimentResult& res) {
    const auto& r = res.report;
    std::cout << "rel_l2 " << (r.rel_l2 ? detail::fmt(*r.rel_l2) : "undefined") << "\nl_inf " << detail::fmt(r.l_inf)
              << "\ndof " << r.dof << "\nrank " << r.diagnostics.rank << "\nassembly_s " << res.timings.assembly_s
              << "\nsolve_s " << res.timings.solve_s << '\n';
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Fine-tuned operator bases for PDE solves"};
    app.require_subcommand(1);

    Common common;
    SolveArgs solve_args;
    auto* solve = app.add_subcommand("solve", "Solve one problem instance and write report artifacts");
    add_common(solve, common);
    add_solve_options(solve, solve_args);

    std::string axis, values;
    int repeats = 1;
    auto* sweep = app.add_subcommand("sweep", "Repeat solves over one parameter axis");
    add_common(sweep, common);
    add_solve_options(sweep, solve_args);
    sweep->add_option("--axis", axis, "dof | beta | m | mu | scales | rank | layers")->required();
    sweep->add_option("--values", values, "Comma separated axis values")->required();
    sweep->add_option("--repeats", repeats, "Runs per value with shifted seeds")->check(CLI::PositiveNumber);

    std::string pt_preset = "example2";
    std::optional<int> pt_epochs, pt_samples;
    auto* pretrain = app.add_subcommand("pretrain", "Train a desk-scale operator network");
    add_common(pretrain, common);
    pretrain->add_option("--preset", pt_preset, "example1 | example2 | example3 | example4");
    pretrain->add_option("--epochs", pt_epochs, "Training epochs");
    pretrain->add_option("--samples", pt_samples, "Training functions");

    std::string grf_kind = "rbf";
    double grf_beta = 0.2;
    int grf_count = 10, grf_sensors = 100;
    auto* grf = app.add_subcommand("grf-sample", "Draw Gaussian random field samples");
    add_common(grf, common);
    grf->add_option("--kind", grf_kind, "rbf | periodic")->check(CLI::IsMember({"rbf", "periodic"}));
    grf->add_option("--beta", grf_beta, "RBF length scale");
    grf->add_option("--count", grf_count, "Number of samples")->check(CLI::PositiveNumber);
    grf->add_option("--sensors", grf_sensors, "Grid points on [0,1]");

    int or_nx = 513, or_nt = 513;
    auto* oracle = app.add_subcommand("oracle", "Compute a reference solution on a space-time grid");
    add_common(oracle, common);
    add_solve_options(oracle, solve_args);
    oracle->add_option("--nx", or_nx, "Spatial nodes");
    oracle->add_option("--nt", or_nt, "Time nodes");

    std::string check_path;
    auto* check = app.add_subcommand("convert-check", "Validate a .fbw.json weight file");
    check->add_option("file", check_path, "Weight file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (solve->parsed()) {
            const auto cfg = build_config(common, solve_args);
            print_report(run_experiment(cfg));
        } else if (sweep->parsed()) {
            auto cfg = build_config(common, solve_args);
            const auto rows = run_sweep(cfg, axis, parse_values(values), repeats);
            fs::create_directories(common.out_dir);
            write_sweep_csv((fs::path(common.out_dir) / "sweep.csv").string(), rows);
            for (const auto& r : rows) {
                std::cout << axis << '=' << r.value << " rel_l2_mean " << r.rel_l2_mean << " failures " << r.failures
                          << '\n';
            }
        } else if (pretrain->parsed()) {
            PretrainConfig cfg = pretrain_defaults(pt_preset);
            if (!common.config.empty()) cfg = pretrain_config_from_json(read_json(common.config), cfg);
            if (pt_epochs) cfg.train.epochs = *pt_epochs;
            if (pt_samples) cfg.train.samples = *pt_samples;
            if (common.seed) {
                cfg.train.seed = *common.seed;
                cfg.data.seed = *common.seed;
                cfg.interface_data.seed = *common.seed;
            }
            cfg.data.threads = common.threads;
            const auto res = pretrain_preset(cfg);
            fs::create_directories(common.out_dir);
            const fs::path dir(common.out_dir);
            save_weights(res.weights, (dir / "model.fbw.json").string());
            auto os = detail::open_out(dir / "pretrain_trace.csv");
            os << "epoch,loss\n";
            for (std::size_t e = 0; e < res.trace.size(); ++e) os << e + 1 << ',' << detail::fmt(res.trace[e]) << '\n';
            std::cout << "train_rel_l2 " << res.train_rel_l2 << (res.aborted ? " (aborted at non-finite loss)" : "")
                      << "\nwrote " << (dir / "model.fbw.json").string() << '\n';
        } else if (grf->parsed()) {
            const std::uint64_t seed = common.seed.value_or(0);
            fs::create_directories(common.out_dir);
            const auto path = (fs::path(common.out_dir) / "grf_samples.csv").string();
            std::vector<Vector> samples;
            if (grf_kind == "rbf") {
                samples = sample_rbf_grf(RbfGrf{grf_beta, grf_sensors}, grf_count, seed);
            } else {
                for (const auto& f : sample_periodic_grf(PeriodicGrf{}, grf_count, seed)) {
                    samples.push_back(f.on_grid(unit_grid(grf_sensors)));
                }
            }
            write_samples_csv(path, unit_grid(grf_sensors), samples);
            std::cout << "wrote " << path << '\n';
        } else if (oracle->parsed()) {
            auto cfg = build_config(common, solve_args);
            if (cfg.problem.family == "elliptic_interface") {
                throw ConfigError("the interface family has a closed-form solution; no grid oracle");
            }
            cfg.reference_nx = or_nx;
            cfg.reference_nt = or_nt;
            const auto inst = make_instance(cfg);
            const auto pts = tensor_grid(or_nx, or_nt, 0.0, 1.0);
            const Vector u = inst.reference(pts);
            fs::create_directories(common.out_dir);
            const auto path = fs::path(common.out_dir) / "reference.csv";
            auto os = detail::open_out(path);
            os << "x,t,u\n";
            for (std::size_t p = 0; p < pts.size(); ++p) {
                os << detail::fmt(pts[p][0]) << ',' << detail::fmt(pts[p][1]) << ','
                   << detail::fmt(u[static_cast<Eigen::Index>(p)]) << '\n';
            }
            std::cout << "wrote " << path.string() << '\n';
        } else if (check->parsed()) {
            const auto wf = load_weights(check_path);
            std::cout << "ok " << wf.kind() << " architecture " << wf.architecture;
            for (const auto& t : trunks_of(wf.model)) std::cout << " trunk_width " << t.output_dim();
            std::cout << '\n';
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
