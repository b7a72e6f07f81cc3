#include "ftopinn/harness.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace ftopinn;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("ftopinn_harness_" + name);
    fs::remove_all(dir);
    return dir;
}

ExperimentConfig small_advection() {
    ExperimentConfig c = preset("example1");
    c.basis.dof = 80;
    c.collocation = CollocationCounts{300, 100, 100, 0};
    c.test_nx = 17;
    c.test_nt = 17;
    c.reference_nx = 129;
    c.reference_nt = 129;
    return c;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
    std::vector<std::vector<std::string>> rows;
    std::ifstream is(p);
    std::string line;
    while (std::getline(is, line)) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        rows.push_back(std::move(cells));
    }
    return rows;
}

} // namespace

TEST(Config, JsonRoundTrip) {
    ExperimentConfig c = preset("example3");
    c.basis.source = "weights";
    c.basis.weights = "model.fbw.json";
    c.basis.scales = 3;
    c.phase2.enabled = true;
    c.phase2.adapt.rank = 4;
    c.phase2.adapt.lambda_b = 2.5;
    c.collocation = CollocationCounts{10, 20, 30, 0};
    c.seed = 17;
    const Json j = to_json(c);
    EXPECT_EQ(to_json(config_from_json(j)), j);
}

TEST(Config, RejectsUnknownKeysAndBadTypes) {
    EXPECT_THROW(config_from_json(Json{{"dof", 10}}), ConfigError);
    EXPECT_THROW(config_from_json(Json{{"basis", {{"dofs", 10}}}}), ConfigError);
    EXPECT_THROW(config_from_json(Json{{"seed", "seven"}}), ConfigError);
    EXPECT_THROW(preset("example5"), ConfigError);
    EXPECT_NO_THROW(config_from_json(Json::object()));
}

TEST(ComputeErrors, ExactAndConstantShift) {
    const Vector ref = Vector::Ones(50);
    const auto same = compute_errors(ref, ref);
    EXPECT_EQ(*same.rel_l2, 0.0);
    EXPECT_EQ(same.l_inf, 0.0);
    const auto shifted = compute_errors(ref, (ref.array() + 0.1).matrix());
    EXPECT_NEAR(*shifted.rel_l2, 0.1, 1e-14);
    EXPECT_NEAR(shifted.l_inf, 0.1, 1e-14);
    EXPECT_EQ(shifted.n_test, 50u);
}

TEST(ComputeErrors, ZeroReferenceLeavesRelativeUndefined) {
    const auto r = compute_errors(Vector::Zero(5), Vector::Constant(5, -0.25));
    EXPECT_FALSE(r.rel_l2.has_value());
    EXPECT_EQ(r.l_inf, 0.25);
    EXPECT_THROW(compute_errors(Vector::Zero(5), Vector::Zero(4)), DimensionError);
}

TEST(ComputeErrors, OrderInvariant) {
    Rng rng(3);
    std::normal_distribution<double> g;
    Vector a(200), b(200);
    for (Eigen::Index i = 0; i < 200; ++i) {
        a[i] = g(rng);
        b[i] = a[i] + 1e-2 * g(rng);
    }
    std::vector<Eigen::Index> perm(200);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const Vector ap = a(perm), bp = b(perm);
    const auto r1 = compute_errors(a, b), r2 = compute_errors(ap, bp);
    EXPECT_NEAR(*r1.rel_l2, *r2.rel_l2, 1e-12);
    EXPECT_EQ(r1.l_inf, r2.l_inf);
}

TEST(Instance, TestGridsPerFamily) {
    auto c = preset("example4");
    const auto inst = make_instance(c);
    EXPECT_EQ(inst.test_points.size(), 101u * 101u);
    EXPECT_EQ(inst.test_points.front()[0], -1.0);
    EXPECT_EQ(inst.test_points.back()[1], 1.0);

    c = preset("example2");
    c.reference_nx = c.reference_nt = 65;
    const auto dr = make_instance(c);
    EXPECT_EQ(dr.test_points.size(), 129u * 129u);
    EXPECT_EQ(dr.input.size(), 100);

    c = preset("example1");
    c.reference_nx = c.reference_nt = 65;
    const auto adv = make_instance(c);
    EXPECT_GE(adv.input.minCoeff(), 1.0 - 1e-15);
}

TEST(Experiment, WritesArtifactsAndIsDeterministic) {
    auto c = small_advection();
    const auto dir = scratch("det");
    c.output_dir = (dir / "a").string();
    const auto r1 = run_experiment(c);
    c.output_dir = (dir / "b").string();
    const auto r2 = run_experiment(c);
    ASSERT_TRUE(r1.report.rel_l2.has_value());
    EXPECT_LT(*r1.report.rel_l2, 0.5);
    EXPECT_EQ(r1.report.dof, 80);
    for (const char* f : {"report.csv", "solution.csv", "pointwise_error.csv"}) {
        EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
    }
    EXPECT_TRUE(fs::exists(dir / "a" / "timings.csv"));

    const auto report = read_csv(dir / "a" / "report.csv");
    ASSERT_EQ(report.size(), 2u);
    ASSERT_EQ(report[0].size(), report[1].size());
    EXPECT_EQ(report[0][6], "rel_l2");
    EXPECT_EQ(std::stod(report[1][6]), *r1.report.rel_l2);

    const auto sol = read_csv(dir / "a" / "solution.csv");
    ASSERT_EQ(sol.size(), 1u + 17u * 17u);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 1; i < sol.size(); ++i) {
        const double u = std::stod(sol[i][2]), v = std::stod(sol[i][3]);
        num += (u - v) * (u - v);
        den += u * u;
    }
    EXPECT_NEAR(std::sqrt(num / den), *r1.report.rel_l2, 1e-12);

    auto echo = std::ifstream(dir / "a" / "config.echo.json");
    const auto back = config_from_json(Json::parse(echo));
    c.output_dir = (dir / "a").string();
    EXPECT_EQ(to_json(back), to_json(c));
}

TEST(Experiment, StageErrorsNameTheStage) {
    auto c = small_advection();
    const auto dir = scratch("stage");
    c.output_dir = dir.string();
    c.basis.source = "weights";
    c.basis.weights = (dir / "missing.fbw.json").string();
    try {
        run_experiment(c);
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("stage 'basis'"), std::string::npos) << e.what();
    }
    EXPECT_TRUE(fs::exists(dir / "config.echo.json"));
    EXPECT_FALSE(fs::exists(dir / "report.csv"));
}

TEST(Experiment, InterfaceRandomFeaturesSplitDof) {
    auto c = preset("example4");
    c.basis.dof = 101;
    c.collocation = CollocationCounts{300, 100, 0, 100};
    c.test_nx = c.test_nt = 21;
    const auto r = run_experiment(c);
    EXPECT_EQ(r.report.dof, 101);
    EXPECT_EQ(r.solution.basis->size() + r.solution.basis2->size(), 101);
    EXPECT_LT(*r.report.rel_l2, 0.1);
}

TEST(Sweep, RowsAndAggregates) {
    auto c = small_advection();
    c.basis.dof = 40;
    const auto rows = run_sweep(c, "dof", {30, 60}, 2);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0].value, 30.0);
    EXPECT_EQ(rows[1].repeats, 2);
    EXPECT_EQ(rows[0].failures, 0);
    EXPECT_GT(rows[0].rel_l2_std, 0.0);
    EXPECT_THROW(run_sweep(c, "dof", {}), ConfigError);
    EXPECT_THROW(run_sweep(c, "width", {1}), ConfigError);
    EXPECT_THROW(run_sweep(c, "dof", {1.5}), ConfigError);

    const auto dir = scratch("sweep");
    fs::create_directories(dir);
    write_sweep_csv((dir / "sweep.csv").string(), rows);
    const auto csv = read_csv(dir / "sweep.csv");
    ASSERT_EQ(csv.size(), 3u);
    EXPECT_EQ(csv[0][4], "rel_l2_mean");
    EXPECT_EQ(std::stod(csv[2][4]), rows[1].rel_l2_mean);
}

TEST(Sweep, FailuresAreCountedAndTheSweepContinues) {
    auto c = small_advection();
    const auto rows = run_sweep(c, "dof", {0, 30});
    EXPECT_EQ(rows[0].failures, 1);
    EXPECT_FALSE(rows[0].error.empty());
    EXPECT_TRUE(std::isnan(rows[0].rel_l2_mean));
    EXPECT_EQ(rows[1].failures, 0);
}

TEST(Pretrain, TinyModelFeedsTheSolver) {
    auto pc = pretrain_defaults("example2");
    pc.train.samples = 12;
    pc.train.epochs = 2;
    pc.data.points_per_sample = 20;
    pc.data.oracle_nx = pc.data.oracle_nt = 33;
    pc.width = 12;
    pc.depth = 3;
    const auto res = pretrain_preset(pc);
    EXPECT_EQ(res.trace.size(), 2u);
    EXPECT_EQ(res.weights.metadata.at("preset"), "example2");

    const auto dir = scratch("pretrain");
    fs::create_directories(dir);
    const auto path = (dir / "model.fbw.json").string();
    save_weights(res.weights, path);

    auto c = preset("example2");
    c.basis.source = "weights";
    c.basis.weights = path;
    c.collocation = CollocationCounts{200, 60, 60, 0};
    c.test_nx = c.test_nt = 9;
    c.reference_nx = c.reference_nt = 65;
    const auto r = run_experiment(c);
    EXPECT_EQ(r.report.dof, 12);

    c.basis.scales = 2;
    EXPECT_EQ(run_experiment(c).report.dof, 24);

    c.basis.scales = 1;
    c.phase2.enabled = true;
    c.phase2.adapt.iterations = 3;
    c.phase2.adapt.layers = 2;
    c.phase2.adapt.rank = 2;
    c.phase2.counts = CollocationCounts{50, 20, 20, 0};
    const auto p2 = run_experiment(c);
    EXPECT_EQ(p2.trace.size(), 4u);
    ASSERT_TRUE(p2.phase1.has_value());

    c.basis.scales = 2;
    const auto p2u = run_experiment(c);
    EXPECT_EQ(p2u.report.dof, 24);
    EXPECT_EQ(p2u.trace.size(), 4u);
    c.basis.scales = 1;

    c.problem.sensors = 50;
    EXPECT_THROW(run_experiment(c), ConfigError);
}

TEST(Pretrain, ConfigParsing) {
    const auto c = pretrain_config_from_json(Json{{"epochs", 7}, {"lr", 1e-3}, {"seed", 4}}, pretrain_defaults("example1"));
    EXPECT_EQ(c.train.epochs, 7);
    EXPECT_EQ(c.train.adam.lr, 1e-3);
    EXPECT_EQ(c.data.seed, 4u);
    EXPECT_EQ(c.preset, "example1");
    EXPECT_THROW(pretrain_config_from_json(Json{{"epoch", 7}}), ConfigError);
    EXPECT_THROW(pretrain_defaults("example9"), ConfigError);
}
