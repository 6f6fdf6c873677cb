#pragma once

// Versioned JSON checkpoints. Doubles are written in shortest round-trip form,
// so save -> load reproduces every parameter bit for bit.

#include <filesystem>
#include <string>

#include "json.hpp"
#include "mgnni/csv.hpp"
#include "mgnni/error.hpp"
#include "mgnni/model.hpp"

namespace mgnni {

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::ordered_json matrix_to_json(const DenseMatrix& m) {
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.data()}};
}

inline DenseMatrix matrix_from_json(const nlohmann::json& j) {
    return {j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
            j.at("data").get<std::vector<double>>()};
}

inline nlohmann::ordered_json model_to_json(const MgnniModel& m) {
    nlohmann::ordered_json j;
    j["format"] = "mgnni-checkpoint";
    j["version"] = kCheckpointVersion;
    j["task"] = to_string(m.task);
    j["multi_label"] = m.multi_label;
    j["solver"] = {{"tol", m.solver_cfg.tol}, {"max_iters", m.solver_cfg.max_iters}};
    nlohmann::ordered_json enc;
    enc["dropout"] = m.encoder.dropout_rate;
    enc["layers"] = nlohmann::ordered_json::array();
    for (const Linear& l : m.encoder.layers)
        enc["layers"].push_back({{"weight", matrix_to_json(l.weight)}, {"bias", matrix_to_json(l.bias)}});
    j["encoder"] = enc;
    j["scales"] = nlohmann::ordered_json::array();
    for (const ScaleModule& s : m.scales)
        j["scales"].push_back(
            {{"m", s.scale_m()}, {"gamma", s.gamma()}, {"eps_f", s.eps_f()}, {"f", matrix_to_json(s.f_weight())}});
    j["attention"] = {{"w_a", matrix_to_json(m.attention.w_a)},
                      {"b_a", matrix_to_json(m.attention.b_a)},
                      {"q", matrix_to_json(m.attention.q)}};
    j["decoder"] = matrix_to_json(m.decoder_weight);
    return j;
}

inline MgnniModel model_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format") != "mgnni-checkpoint") throw ValidationError("checkpoint: unknown format");
        const int version = j.at("version").get<int>();
        if (version != kCheckpointVersion)
            throw ValidationError("checkpoint: unsupported version " + std::to_string(version));
        MgnniModel m;
        const std::string task = j.at("task").get<std::string>();
        if (task == "node")
            m.task = Task::node_classification;
        else if (task == "graph")
            m.task = Task::graph_classification;
        else
            throw ValidationError("checkpoint: unknown task '" + task + "'");
        m.multi_label = j.at("multi_label").get<bool>();
        m.solver_cfg.tol = j.at("solver").at("tol").get<double>();
        m.solver_cfg.max_iters = j.at("solver").at("max_iters").get<std::size_t>();
        m.encoder.dropout_rate = j.at("encoder").at("dropout").get<double>();
        for (const auto& l : j.at("encoder").at("layers"))
            m.encoder.layers.push_back({matrix_from_json(l.at("weight")), matrix_from_json(l.at("bias"))});
        for (const auto& s : j.at("scales"))
            m.scales.emplace_back(matrix_from_json(s.at("f")), s.at("gamma").get<double>(),
                                  s.at("m").get<unsigned>(), s.at("eps_f").get<double>());
        m.attention.w_a = matrix_from_json(j.at("attention").at("w_a"));
        m.attention.b_a = matrix_from_json(j.at("attention").at("b_a"));
        m.attention.q = matrix_from_json(j.at("attention").at("q"));
        m.decoder_weight = matrix_from_json(j.at("decoder"));
        m.validate();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("checkpoint: ") + e.what());
    }
}

inline void save_checkpoint(const MgnniModel& m, const std::filesystem::path& path) {
    write_file(path, model_to_json(m).dump(1) + "\n");
}

inline MgnniModel load_checkpoint(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string(), 0, e.what());
    }
    return model_from_json(j);
}

} // namespace mgnni
