#include "ftopinn/weight_io.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace ftopinn;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream(path, std::ios::binary) << text;
}

} // namespace

TEST(WeightIo, IdentityMlpDims) {
    MlpSpec net;
    net.layers.push_back({Matrix::Identity(1, 1), Vector::Zero(1)});
    const Json j = to_json(WeightFile{net});
    EXPECT_EQ(j["nets"]["net"]["layers"][0]["dims"], Json::array({1, 1}));
    EXPECT_EQ(j["model_kind"], "mlp");
    EXPECT_EQ(j["format_version"], 1);
}

TEST(WeightIo, DeepOnetRoundTripIsLosslessAndCanonical) {
    Rng rng(1);
    const auto model = init_deeponet(sensor_points(unit_grid(10)), 2, 3, 7, rng);
    WeightFile wf{model};
    wf.metadata = Json{{"seed", 1}, {"note", "unit test"}};
    const auto p1 = temp_path("ftopinn_a.fbw.json");
    const auto p2 = temp_path("ftopinn_b.fbw.json");
    save_weights(wf, p1);
    const auto loaded = load_weights(p1);
    save_weights(loaded, p2);
    EXPECT_EQ(read_file(p1), read_file(p2));
    const auto& m = std::get<DeepOnet>(loaded.model);
    EXPECT_EQ(m.trunk.layers[1].weight, model.trunk.layers[1].weight);
    EXPECT_EQ(m.branch.layers[2].bias, model.branch.layers[2].bias);
    const Vector v = Vector::Random(10);
    const auto pts = test::random_points(20, rng);
    EXPECT_LT((m.predict(v, pts) - model.predict(v, pts)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(loaded.metadata["note"], "unit test");
    EXPECT_EQ(trunks_of(loaded.model).size(), 1u);
}

TEST(WeightIo, IonetRoundTrip) {
    Rng rng(2);
    const auto [s1, s2] = interface_sensors(6, {});
    const auto model = init_ionet(s1, s2, 2, 4, rng);
    const auto p = temp_path("ftopinn_ionet.fbw.json");
    save_weights(WeightFile{model}, p);
    const auto loaded = load_weights(p);
    const auto& m = std::get<Ionet>(loaded.model);
    EXPECT_EQ(m.sensors1.size(), s1.size());
    EXPECT_EQ(m.trunk2.layers[0].weight, model.trunk2.layers[0].weight);
    EXPECT_EQ(trunks_of(loaded.model).size(), 2u);
}

TEST(WeightIo, RejectsMalformedFiles) {
    Rng rng(3);
    const auto model = init_deeponet(sensor_points(unit_grid(4)), 2, 2, 3, rng);
    const std::string text = dump_weights(WeightFile{model});
    const auto p = temp_path("ftopinn_bad.fbw.json");

    write_file(p, text.substr(0, text.size() / 2));
    EXPECT_THROW(load_weights(p), ConfigError);

    Json j = Json::parse(text);
    j["nets"]["trunk"]["layers"][1]["weight"][0] = nullptr;
    write_file(p, j.dump());
    try {
        load_weights(p);
        FAIL();
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("layer 1"), std::string::npos);
    }

    j = Json::parse(text);
    j["nets"]["branch"]["layers"][0]["bias"].erase(0);
    write_file(p, j.dump());
    try {
        load_weights(p);
        FAIL();
    } catch (const DimensionError& e) {
        EXPECT_NE(std::string(e.what()).find("layer 0"), std::string::npos);
    }

    j = Json::parse(text);
    j["nets"]["trunk"]["layers"][1]["dims"] = {3, 5};
    j["nets"]["trunk"]["layers"][1]["weight"] = std::vector<double>(15, 0.0);
    write_file(p, j.dump());
    EXPECT_THROW(load_weights(p), DimensionError);

    j = Json::parse(text);
    j["format_version"] = 2;
    write_file(p, j.dump());
    EXPECT_THROW(load_weights(p), ConfigError);

    j = Json::parse(text);
    j["architecture"] = "modified_fnn";
    write_file(p, j.dump());
    try {
        load_weights(p);
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("modified_fnn"), std::string::npos);
    }

    EXPECT_THROW(load_weights(temp_path("ftopinn_missing.fbw.json")), ConfigError);
}
