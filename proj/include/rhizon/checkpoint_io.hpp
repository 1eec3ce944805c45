#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rhizon/config_json.hpp"
#include "rhizon/errors.hpp"
#include "rhizon/model.hpp"

namespace rhizon {

/// Checkpoint container: magic "RHZN", u32 version, u64 header length, JSON
/// header (config, train_meta, tensor directory), then a single float32
/// little-endian payload. Tensors are stored column-major exactly as held in
/// memory, so save/load round-trips bit-exactly. Little-endian hosts only.
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'R', 'H', 'Z', 'N'};

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    nlohmann::json dir = nlohmann::json::array();
    std::uint64_t offset = 0;
    for_each_tensor(const_cast<Params&>(ckpt.params), [&](const std::string& name, MatrixF& t) {
        dir.push_back({{"name", name},
                       {"rows", t.rows()},
                       {"cols", t.cols()},
                       {"offset", offset}});
        offset += static_cast<std::uint64_t>(t.size()) * sizeof(float);
    });
    nlohmann::json header = {
        {"config", json_io::to_json(ckpt.config)},
        {"train_meta",
         {{"steps", ckpt.train_meta.steps},
          {"final_loss", ckpt.train_meta.final_loss},
          {"seed", ckpt.train_meta.seed}}},
        {"tensors", dir},
    };
    const std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(kCheckpointMagic, 4);
    const std::uint32_t ver = kCheckpointVersion;
    out.write(reinterpret_cast<const char*>(&ver), sizeof ver);
    const std::uint64_t hlen = hs.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for_each_tensor(const_cast<Params&>(ckpt.params), [&](const std::string&, MatrixF& t) {
        out.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<std::streamsize>(static_cast<std::uint64_t>(t.size()) * sizeof(float)));
    });
    if (!out) throw IoError("write failed for " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw DataError("bad checkpoint magic in " + path.string());
    std::uint32_t ver = 0;
    in.read(reinterpret_cast<char*>(&ver), sizeof ver);
    if (!in || ver != kCheckpointVersion)
        throw DataError("unsupported checkpoint version in " + path.string());
    std::uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
    if (!in || hlen == 0 || hlen > (1ULL << 24)) throw DataError("corrupt header length");
    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw DataError("truncated checkpoint header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint header parse: ") + e.what());
    }

    Checkpoint ckpt;
    try {
        ckpt.config = json_io::model_config_from_json(header.at("config"));
        const auto& tm = header.at("train_meta");
        ckpt.train_meta.steps = tm.at("steps").get<long>();
        ckpt.train_meta.final_loss = tm.at("final_loss").get<double>();
        ckpt.train_meta.seed = tm.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint header fields: ") + e.what());
    }
    ckpt.config.validate();

    // Allocate via init shapes, then shape-check against the directory.
    ckpt.params = init_model(ckpt.config, 0).params;
    const auto& dir = header.at("tensors");
    std::size_t i = 0;
    for_each_tensor(ckpt.params, [&](const std::string& name, MatrixF& t) {
        if (i >= dir.size()) throw DataError("tensor directory too short");
        const auto& e = dir[i++];
        if (e.at("name").get<std::string>() != name)
            throw DataError("tensor order mismatch at " + name);
        if (e.at("rows").get<long>() != t.rows() || e.at("cols").get<long>() != t.cols())
            throw DataError("tensor shape mismatch at " + name);
        in.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(static_cast<std::uint64_t>(t.size()) * sizeof(float)));
        if (!in) throw DataError("truncated tensor payload at " + name);
    });
    if (i != dir.size()) throw DataError("tensor directory too long");
    return ckpt;
}

} // namespace rhizon
