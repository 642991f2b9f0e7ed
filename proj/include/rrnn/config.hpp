#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "rrnn/cells.hpp"
#include "rrnn/data.hpp"
#include "rrnn/errors.hpp"
#include "rrnn/model.hpp"
#include "rrnn/restriction.hpp"
#include "rrnn/training.hpp"

namespace rrnn {

struct DataConfig {
    std::string train;
    std::string valid;
    std::string test;
    TokenMode mode = TokenMode::word;
    UnkPolicy unk = UnkPolicy::reserve;
};

struct OutputConfig {
    std::string metrics = "metrics.jsonl";
    std::string checkpoint = "final.ckpt";
    std::string best_checkpoint = "best.ckpt";
};

// Model defaults: 3 x 200 hidden, 200 embedding, r = 0.5, tied, dropout 0.2.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    DataConfig data;
    OutputConfig output;
};

namespace detail {

using nlohmann::json;

inline void reject_unknown(const json& obj, const std::string& section, const std::set<std::string>& known) {
    if (!obj.is_object()) throw config_error(section + ": expected an object");
    for (const auto& [key, _] : obj.items()) {
        if (!known.count(key)) throw config_error(section + "." + key + ": unknown key");
    }
}

template <typename T>
void read(const json& obj, const std::string& section, const char* key, T& out) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw config_error(section + "." + key + ": " + e.what());
    }
}

inline RateMatrix rates_from_json(const json& j, CellFamily family) {
    if (!j.is_array() || j.size() != cell_inputs) {
        throw config_error("model.rates: expected a 2 x " + std::to_string(gate_count(family)) + " matrix");
    }
    std::vector<double> v;
    for (const auto& row : j) {
        if (!row.is_array() || row.size() != gate_count(family)) {
            throw config_error("model.rates: every row needs " + std::to_string(gate_count(family)) + " rates");
        }
        for (const auto& r : row) {
            if (!r.is_number()) throw config_error("model.rates: rates must be numbers");
            v.push_back(r.get<double>());
        }
    }
    return RateMatrix(cell_inputs, gate_count(family), std::move(v));
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
    using detail::read;
    RunConfig cfg;
    detail::reject_unknown(j, "config", {"model", "train", "data", "output"});

    if (j.contains("model")) {
        const auto& m = j["model"];
        detail::reject_unknown(m, "model",
                               {"family", "layers", "hidden", "emb", "rate", "rates", "tied", "dropout", "dropout_embedding"});
        std::string family = "lstm";
        read(m, "model", "family", family);
        try {
            cfg.model.family = parse_family(family);
        } catch (const validation_error& e) {
            throw config_error(std::string("model.family: ") + e.what());
        }
        read(m, "model", "layers", cfg.model.layers);
        read(m, "model", "hidden", cfg.model.hidden);
        read(m, "model", "emb", cfg.model.emb);
        read(m, "model", "tied", cfg.model.tied);
        read(m, "model", "dropout", cfg.model.dropout);
        read(m, "model", "dropout_embedding", cfg.model.dropout_embedding);
        if (m.contains("rate") && m.contains("rates")) throw config_error("model: give either rate or rates, not both");
        double rate = 0.5;
        read(m, "model", "rate", rate);
        cfg.model.rates = m.contains("rates") ? detail::rates_from_json(m["rates"], cfg.model.family)
                                              : RateMatrix::uniform(cell_inputs, gate_count(cfg.model.family), rate);
    }

    if (j.contains("train")) {
        const auto& t = j["train"];
        detail::reject_unknown(t, "train",
                               {"lr", "momentum", "weight_decay", "clip_norm", "epochs", "batch_size", "bptt", "seed"});
        read(t, "train", "lr", cfg.train.lr);
        read(t, "train", "momentum", cfg.train.momentum);
        read(t, "train", "weight_decay", cfg.train.weight_decay);
        read(t, "train", "clip_norm", cfg.train.clip_norm);
        read(t, "train", "epochs", cfg.train.epochs);
        read(t, "train", "batch_size", cfg.train.batch_size);
        read(t, "train", "bptt", cfg.train.bptt);
        read(t, "train", "seed", cfg.train.seed);
    }

    if (j.contains("data")) {
        const auto& d = j["data"];
        detail::reject_unknown(d, "data", {"train", "valid", "test", "mode", "unk"});
        read(d, "data", "train", cfg.data.train);
        read(d, "data", "valid", cfg.data.valid);
        read(d, "data", "test", cfg.data.test);
        std::string mode = "word";
        std::string unk = "reserve";
        read(d, "data", "mode", mode);
        read(d, "data", "unk", unk);
        try {
            cfg.data.mode = parse_token_mode(mode);
            cfg.data.unk = parse_unk_policy(unk);
        } catch (const validation_error& e) {
            throw config_error(std::string("data: ") + e.what());
        }
    }

    if (j.contains("output")) {
        const auto& o = j["output"];
        detail::reject_unknown(o, "output", {"metrics", "checkpoint", "best_checkpoint"});
        read(o, "output", "metrics", cfg.output.metrics);
        read(o, "output", "checkpoint", cfg.output.checkpoint);
        read(o, "output", "best_checkpoint", cfg.output.best_checkpoint);
    }
    return cfg;
}

inline nlohmann::json to_json(const RunConfig& cfg) {
    nlohmann::json rates = nlohmann::json::array();
    for (std::size_t i = 0; i < cfg.model.rates.inputs(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t g = 0; g < cfg.model.rates.gates(); ++g) row.push_back(cfg.model.rates(i, g));
        rates.push_back(row);
    }
    return {
        {"model",
         {{"family", std::string(to_string(cfg.model.family))},
          {"layers", cfg.model.layers},
          {"hidden", cfg.model.hidden},
          {"emb", cfg.model.emb},
          {"rates", rates},
          {"tied", cfg.model.tied},
          {"dropout", cfg.model.dropout},
          {"dropout_embedding", cfg.model.dropout_embedding}}},
        {"train",
         {{"lr", cfg.train.lr},
          {"momentum", cfg.train.momentum},
          {"weight_decay", cfg.train.weight_decay},
          {"clip_norm", cfg.train.clip_norm},
          {"epochs", cfg.train.epochs},
          {"batch_size", cfg.train.batch_size},
          {"bptt", cfg.train.bptt},
          {"seed", cfg.train.seed}}},
        {"data",
         {{"train", cfg.data.train},
          {"valid", cfg.data.valid},
          {"test", cfg.data.test},
          {"mode", std::string(to_string(cfg.data.mode))},
          {"unk", std::string(to_string(cfg.data.unk))}}},
        {"output",
         {{"metrics", cfg.output.metrics},
          {"checkpoint", cfg.output.checkpoint},
          {"best_checkpoint", cfg.output.best_checkpoint}}},
    };
}

// Paths in the data section are resolved against the config file's directory.
inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot read config '" + path.string() + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in, nullptr, true, true);
    } catch (const nlohmann::json::exception& e) {
        throw config_error("config '" + path.string() + "': " + e.what());
    }
    RunConfig cfg = parse_run_config(j);
    const auto base = path.parent_path();
    for (auto* p : {&cfg.data.train, &cfg.data.valid, &cfg.data.test}) {
        if (!p->empty() && std::filesystem::path(*p).is_relative()) *p = (base / *p).lexically_normal().string();
    }
    return cfg;
}

// Checks that every field a training run needs is present and consistent.
inline void validate_for_training(const RunConfig& cfg) {
    if (cfg.data.train.empty()) throw config_error("data.train: missing training file path");
    if (cfg.data.valid.empty()) throw config_error("data.valid: missing validation file path");
    if (cfg.data.test.empty()) throw config_error("data.test: missing test file path");
    for (auto [name, p] : {std::pair{"data.train", &cfg.data.train}, std::pair{"data.valid", &cfg.data.valid},
                           std::pair{"data.test", &cfg.data.test}}) {
        if (!std::filesystem::exists(*p)) throw config_error(std::string(name) + ": file '" + *p + "' does not exist");
    }
    try {
        cfg.train.validate();
    } catch (const validation_error& e) {
        throw config_error(std::string("train: ") + e.what());
    }
    if (cfg.model.layers == 0 || cfg.model.hidden == 0 || cfg.model.emb == 0) {
        throw config_error("model: layers, hidden and emb must be positive");
    }
    if (cfg.model.tied && cfg.model.emb != cfg.model.hidden) {
        throw config_error("model.tied: tied embedding needs emb == hidden");
    }
    if (!(cfg.model.dropout >= 0.0 && cfg.model.dropout < 1.0)) throw config_error("model.dropout: must lie in [0, 1)");
    for (double r : cfg.model.rates.values()) {
        if (!(r >= 0.0 && r <= 1.0)) throw config_error("model.rates: every rate must lie in [0, 1]");
    }
}

}  // namespace rrnn
