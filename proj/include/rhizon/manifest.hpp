#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rhizon/config_json.hpp"
#include "rhizon/version.hpp"

namespace rhizon {

/// Provenance record written next to every CLI output as
/// <output>.manifest.json. Holds the wall-clock stamp, so manifests are the
/// one output class excluded from byte-identity comparisons between reruns.
struct RunManifest {
    std::string tool;
    std::vector<std::string> argv;
    std::uint64_t seed = 0;
    std::vector<std::string> outputs;
    nlohmann::json extra;  ///< tool-specific settings
};

inline void write_manifest(const RunManifest& m, const std::filesystem::path& primary_output) {
    const auto now = std::chrono::system_clock::now();
    const std::time_t tt = std::chrono::system_clock::to_time_t(now);
    char stamp[32];
    std::tm tm_utc{};
    gmtime_r(&tt, &tm_utc);
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &tm_utc);

    nlohmann::json j = {
        {"schema_version", kSchemaVersion},
        {"tool", m.tool},
        {"version", kVersionString},
        {"argv", m.argv},
        {"seed", m.seed},
        {"outputs", m.outputs},
        {"created_utc", stamp},
    };
    if (!m.extra.is_null()) j["settings"] = m.extra;
    json_io::write_file(j, primary_output.string() + ".manifest.json");
}

} // namespace rhizon
