#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "rhizon/corpus.hpp"
#include "rhizon/errors.hpp"
#include "rhizon/model.hpp"
#include "rhizon/niah.hpp"
#include "rhizon/rope.hpp"
#include "rhizon/sampler.hpp"
#include "rhizon/scaling.hpp"
#include "rhizon/train.hpp"

namespace rhizon {

inline constexpr int kSchemaVersion = 1;

namespace json_io {

using nlohmann::json;

template <class T>
T get_or(const json& j, const char* key, T fallback) {
    if (auto it = j.find(key); it != j.end()) return it->get<T>();
    return fallback;
}

inline void check_schema(const json& j, const char* kind) {
    if (auto it = j.find("schema_version"); it != j.end() && it->get<int>() != kSchemaVersion)
        throw DataError(std::string(kind) + ": unsupported schema_version");
}

inline json to_json(const RopeConfig& c) {
    return {{"schema_version", kSchemaVersion},
            {"head_dim", c.head_dim},
            {"rotary_base", c.rotary_base},
            {"train_len", c.train_len}};
}

inline RopeConfig rope_config_from_json(const json& j) {
    check_schema(j, "rope_config");
    RopeConfig c;
    c.head_dim = j.at("head_dim").get<int>();
    c.rotary_base = j.at("rotary_base").get<double>();
    c.train_len = j.at("train_len").get<long>();
    c.validate();
    return c;
}

inline json to_json(const ModelConfig& c) {
    return {{"schema_version", kSchemaVersion},
            {"vocab_size", c.vocab_size},
            {"n_layers", c.n_layers},
            {"d_model", c.d_model},
            {"n_heads", c.n_heads},
            {"head_dim", c.head_dim},
            {"rotary_base", c.rotary_base},
            {"train_len", c.train_len},
            {"mode", std::string(to_string(c.mode))},
            {"mask_token_id", c.mask_token_id}};
}

inline ModelConfig model_config_from_json(const json& j) {
    check_schema(j, "model_config");
    ModelConfig c;
    c.vocab_size = j.at("vocab_size").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.head_dim = j.at("head_dim").get<int>();
    c.rotary_base = j.at("rotary_base").get<double>();
    c.train_len = j.at("train_len").get<long>();
    const std::string mode = j.at("mode").get<std::string>();
    if (mode == "causal")
        c.mode = ModelMode::causal;
    else if (mode == "bidirectional_mdlm")
        c.mode = ModelMode::bidirectional_mdlm;
    else
        throw DataError("unknown model mode: " + mode);
    c.mask_token_id = j.at("mask_token_id").get<int>();
    c.validate();
    return c;
}

inline json to_json(const SamplerConfig& c) {
    return {{"schema_version", kSchemaVersion},
            {"gen_len", c.gen_len},
            {"block_len", c.block_len},
            {"steps", c.steps},
            {"remasking", std::string(to_string(c.remasking))}};
}

inline SamplerConfig sampler_config_from_json(const json& j) {
    check_schema(j, "sampler_config");
    SamplerConfig c;
    c.gen_len = j.at("gen_len").get<long>();
    c.block_len = j.at("block_len").get<long>();
    c.steps = j.at("steps").get<long>();
    const std::string r = j.at("remasking").get<std::string>();
    if (r == "low_confidence")
        c.remasking = Remasking::low_confidence;
    else if (r == "random")
        c.remasking = Remasking::random;
    else
        throw DataError("unknown remasking strategy: " + r);
    c.validate();
    return c;
}

inline json to_json(const NiahSpec& s) {
    return {{"schema_version", kSchemaVersion},
            {"lengths", s.lengths},
            {"depths", s.depths},
            {"trials", s.trials},
            {"sampler", to_json(s.sampler)},
            {"seed", s.seed}};
}

inline NiahSpec niah_spec_from_json(const json& j) {
    check_schema(j, "niah_spec");
    NiahSpec s;
    s.lengths = j.at("lengths").get<std::vector<long>>();
    s.depths = j.at("depths").get<std::vector<double>>();
    s.trials = j.at("trials").get<int>();
    if (j.contains("sampler")) s.sampler = sampler_config_from_json(j.at("sampler"));
    s.seed = get_or<std::uint64_t>(j, "seed", s.seed);
    return s;
}

inline json to_json(const TrainHyper& h) {
    return {{"schema_version", kSchemaVersion},
            {"steps", h.steps},
            {"batch_size", h.batch_size},
            {"lr", h.lr},
            {"lr_min_frac", h.lr_min_frac},
            {"warmup_steps", h.warmup_steps},
            {"beta1", h.beta1},
            {"beta2", h.beta2},
            {"adam_eps", h.adam_eps},
            {"grad_clip", h.grad_clip},
            {"n_jobs", h.n_jobs},
            {"sft_tail", h.sft_tail},
            {"sft_anchor", h.sft_anchor}};
}

inline TrainHyper train_hyper_from_json(const json& j) {
    check_schema(j, "train_hyper");
    TrainHyper h;
    h.steps = get_or<long>(j, "steps", h.steps);
    h.batch_size = get_or<int>(j, "batch_size", h.batch_size);
    h.lr = get_or<double>(j, "lr", h.lr);
    h.lr_min_frac = get_or<double>(j, "lr_min_frac", h.lr_min_frac);
    h.warmup_steps = get_or<long>(j, "warmup_steps", h.warmup_steps);
    h.beta1 = get_or<double>(j, "beta1", h.beta1);
    h.beta2 = get_or<double>(j, "beta2", h.beta2);
    h.adam_eps = get_or<double>(j, "adam_eps", h.adam_eps);
    h.grad_clip = get_or<double>(j, "grad_clip", h.grad_clip);
    h.n_jobs = get_or<int>(j, "n_jobs", h.n_jobs);
    h.sft_tail = get_or<long>(j, "sft_tail", h.sft_tail);
    h.sft_anchor = get_or<long>(j, "sft_anchor", h.sft_anchor);
    h.validate();
    return h;
}

inline json to_json(const ScalingReport& r) {
    json entries = json::array();
    for (const auto& e : r.entries)
        entries.push_back({{"target_len", e.target_len},
                           {"lambda_raw", e.lambda_raw},
                           {"lambda_int", e.lambda_int},
                           {"bound_at_lambda_int", e.bound_at_lambda_int}});
    return {{"schema_version", kSchemaVersion},
            {"head_dim", r.config.head_dim},
            {"rotary_base", r.config.rotary_base},
            {"train_len", r.config.train_len},
            {"critical_dim", r.critical_dim},
            {"entries", entries}};
}

inline json parse_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

inline void write_file(const json& j, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed for " + path.string());
}

} // namespace json_io
} // namespace rhizon
