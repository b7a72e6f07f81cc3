#pragma once

#include "ftopinn/pretrain.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace ftopinn {

using Json = nlohmann::json;

inline constexpr int kWeightFormatVersion = 1;

using Model = std::variant<MlpSpec, DeepOnet, Ionet>;

/// In-memory form of a `.fbw.json` file.
struct WeightFile {
    Model model;
    std::string architecture = "fnn";
    Json metadata = Json::object();

    [[nodiscard]] std::string kind() const {
        static constexpr const char* names[] = {"mlp", "deeponet", "ionet"};
        return names[model.index()];
    }
};

namespace detail {

inline Json layer_to_json(const DenseLayer& l) {
    Json j;
    j["dims"] = {l.out_dim(), l.in_dim()};
    std::vector<double> w(static_cast<std::size_t>(l.weight.size()));
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c) w[static_cast<std::size_t>(r * l.weight.cols() + c)] = l.weight(r, c);
    j["weight"] = std::move(w);
    j["bias"] = std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size());
    return j;
}

inline Json net_to_json(const MlpSpec& net) {
    Json layers = Json::array();
    for (const auto& l : net.layers) layers.push_back(layer_to_json(l));
    return Json{{"layers", std::move(layers)}};
}

inline Json points_to_json(const std::vector<Point>& pts) {
    Json a = Json::array();
    for (const auto& p : pts) a.push_back(std::vector<double>(p.data(), p.data() + p.size()));
    return a;
}

inline std::vector<double> numbers(const Json& a, const std::string& where) {
    if (!a.is_array()) throw ConfigError(where + " must be an array");
    std::vector<double> out;
    out.reserve(a.size());
    for (const auto& v : a) {
        if (v.is_null()) throw NumericalError(where + " contains a null (non-finite) entry");
        if (!v.is_number()) throw ConfigError(where + " contains a non-number");
        out.push_back(v.get<double>());
        if (!std::isfinite(out.back())) throw NumericalError(where + " contains a non-finite entry");
    }
    return out;
}

inline const Json& field(const Json& obj, const std::string& key, const std::string& where) {
    if (!obj.is_object() || !obj.contains(key)) throw ConfigError(where + ": missing field '" + key + "'");
    return obj.at(key);
}

inline MlpSpec net_from_json(const Json& j, const std::string& name, Activation act) {
    const auto& layers = field(j, "layers", "net '" + name + "'");
    if (!layers.is_array() || layers.empty()) throw ConfigError("net '" + name + "' has no layers");
    MlpSpec net;
    net.activation = act;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::string where = "net '" + name + "' layer " + std::to_string(l);
        const auto& lj = layers[l];
        const auto dims = numbers(field(lj, "dims", where), where + " dims");
        if (dims.size() != 2 || dims[0] < 1 || dims[1] < 1 || dims[0] != std::floor(dims[0]) || dims[1] != std::floor(dims[1])) {
            throw DimensionError(where + ": dims must be two positive integers [out, in]");
        }
        const auto out = static_cast<Eigen::Index>(dims[0]);
        const auto in = static_cast<Eigen::Index>(dims[1]);
        const auto w = numbers(field(lj, "weight", where), where + " weight");
        const auto b = numbers(field(lj, "bias", where), where + " bias");
        if (static_cast<Eigen::Index>(w.size()) != out * in) {
            throw DimensionError(where + ": weight has " + std::to_string(w.size()) + " entries, dims " +
                                 dims_string(out, in) + " need " + std::to_string(out * in));
        }
        if (static_cast<Eigen::Index>(b.size()) != out) {
            throw DimensionError(where + ": bias has " + std::to_string(b.size()) + " entries, expected " +
                                 std::to_string(out));
        }
        DenseLayer layer{Matrix(out, in), Vector(out)};
        for (Eigen::Index r = 0; r < out; ++r)
            for (Eigen::Index c = 0; c < in; ++c) layer.weight(r, c) = w[static_cast<std::size_t>(r * in + c)];
        for (Eigen::Index r = 0; r < out; ++r) layer.bias[r] = b[static_cast<std::size_t>(r)];
        net.layers.push_back(std::move(layer));
    }
    try {
        net.validate();
    } catch (const DimensionError& e) {
        throw DimensionError("net '" + name + "': " + e.what());
    }
    return net;
}

inline std::vector<Point> points_from_json(const Json& a, const std::string& where) {
    if (!a.is_array()) throw ConfigError(where + " must be an array of points");
    std::vector<Point> pts;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto c = numbers(a[i], where + "[" + std::to_string(i) + "]");
        if (c.empty() || c.size() > 3) throw DimensionError(where + "[" + std::to_string(i) + "] must have 1 to 3 coordinates");
        Point p(static_cast<Eigen::Index>(c.size()));
        for (std::size_t k = 0; k < c.size(); ++k) p[static_cast<Eigen::Index>(k)] = c[k];
        pts.push_back(p);
    }
    return pts;
}

} // namespace detail

inline Json to_json(const WeightFile& wf) {
    Json j;
    j["format_version"] = kWeightFormatVersion;
    j["model_kind"] = wf.kind();
    j["architecture"] = wf.architecture;
    j["metadata"] = wf.metadata;
    Json nets = Json::object();
    std::visit(
        [&](const auto& m) {
            using M = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<M, MlpSpec>) {
                m.validate();
                j["activation"] = to_string(m.activation);
                nets["net"] = detail::net_to_json(m);
            } else if constexpr (std::is_same_v<M, DeepOnet>) {
                m.validate();
                j["activation"] = to_string(m.trunk.activation);
                nets["branch"] = detail::net_to_json(m.branch);
                nets["trunk"] = detail::net_to_json(m.trunk);
                j["sensors"] = detail::points_to_json(m.sensors);
            } else {
                m.validate();
                j["activation"] = to_string(m.trunk1.activation);
                nets["branch1"] = detail::net_to_json(m.branch1);
                nets["branch2"] = detail::net_to_json(m.branch2);
                nets["trunk1"] = detail::net_to_json(m.trunk1);
                nets["trunk2"] = detail::net_to_json(m.trunk2);
                j["sensors1"] = detail::points_to_json(m.sensors1);
                j["sensors2"] = detail::points_to_json(m.sensors2);
                j["geometry"] = Json{{"radius", m.geometry.radius}};
            }
        },
        wf.model);
    j["nets"] = std::move(nets);
    return j;
}

inline WeightFile from_json(const Json& j) {
    const std::string top = "weight file";
    const auto& version = detail::field(j, "format_version", top);
    if (!version.is_number_integer() || version.get<int>() != kWeightFormatVersion) {
        throw ConfigError("unsupported weight format_version " + version.dump() + " (expected " +
                          std::to_string(kWeightFormatVersion) + ")");
    }
    WeightFile wf;
    if (j.contains("architecture")) {
        wf.architecture = j.at("architecture").get<std::string>();
    }
    if (wf.architecture == "modified_fnn") {
        throw ConfigError("architecture 'modified_fnn' needs an architecture plug-in on the loading side; "
                          "only plain feedforward ('fnn') networks are supported");
    }
    if (wf.architecture != "fnn") {
        throw ConfigError("unknown architecture '" + wf.architecture + "'");
    }
    const auto act = activation_from_string(detail::field(j, "activation", top).get<std::string>());
    if (j.contains("metadata")) wf.metadata = j.at("metadata");
    const auto& nets = detail::field(j, "nets", top);
    const auto kind = detail::field(j, "model_kind", top).get<std::string>();
    auto net = [&](const std::string& name) { return detail::net_from_json(detail::field(nets, name, "nets"), name, act); };
    if (kind == "mlp") {
        wf.model = net("net");
    } else if (kind == "deeponet") {
        DeepOnet m{net("branch"), net("trunk"), detail::points_from_json(detail::field(j, "sensors", top), "sensors")};
        m.validate();
        wf.model = std::move(m);
    } else if (kind == "ionet") {
        Ionet m{net("branch1"), net("branch2"), net("trunk1"), net("trunk2"),
                detail::points_from_json(detail::field(j, "sensors1", top), "sensors1"),
                detail::points_from_json(detail::field(j, "sensors2", top), "sensors2"),
                {}};
        if (j.contains("geometry")) m.geometry.radius = detail::field(j.at("geometry"), "radius", "geometry").get<double>();
        m.validate();
        wf.model = std::move(m);
    } else {
        throw ConfigError("unknown model_kind '" + kind + "'");
    }
    return wf;
}

/// Canonical text: sorted keys, shortest round-trip numbers, one trailing newline.
inline std::string dump_weights(const WeightFile& wf) {
    return to_json(wf).dump() + "\n";
}

inline void save_weights(const WeightFile& wf, const std::string& path) {
    const std::string text = dump_weights(wf);
    std::ofstream os(path, std::ios::binary);
    if (!os || !(os << text)) {
        throw ConfigError("cannot write weight file " + path);
    }
}

inline WeightFile load_weights(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw ConfigError("cannot open weight file " + path);
    }
    std::stringstream ss;
    ss << is.rdbuf();
    Json j;
    try {
        j = Json::parse(ss.str());
    } catch (const Json::parse_error& e) {
        throw ConfigError(path + ": JSON parse error at byte " + std::to_string(e.byte));
    }
    try {
        return from_json(j);
    } catch (const Json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    } catch (const NumericalError& e) {
        throw NumericalError(path + ": " + e.what());
    } catch (const DimensionError& e) {
        throw DimensionError(path + ": " + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

/// Trunk net(s) usable as a basis: the net of an mlp file, the trunk of a
/// DeepONet, or (trunk1, trunk2) of an IONet.
inline std::vector<MlpSpec> trunks_of(const Model& m) {
    return std::visit(
        [](const auto& x) -> std::vector<MlpSpec> {
            using M = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<M, MlpSpec>) return {x};
            else if constexpr (std::is_same_v<M, DeepOnet>) return {x.trunk};
            else return {x.trunk1, x.trunk2};
        },
        m);
}

} // namespace ftopinn
