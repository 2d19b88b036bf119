#pragma once

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace bend::cli {

inline constexpr const char* kToolVersion = "0.1.0";

/// Lower-case hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

struct ManifestEntry {
    std::string path;  // relative to the run directory
    std::string sha256;
    std::uintmax_t bytes = 0;
};

struct RunManifest {
    std::string command;
    nlohmann::json config;
    std::vector<std::uint64_t> seeds;
    std::vector<ManifestEntry> files;
    std::string tool_version = kToolVersion;
};

/// Hashes `files` (relative to `dir`) and writes dir/manifest.json.
RunManifest write_manifest(const std::filesystem::path& dir, const std::string& command, const nlohmann::json& config,
                           const std::vector<std::uint64_t>& seeds, const std::vector<std::string>& files);

RunManifest read_manifest(const std::filesystem::path& dir);

/// Files that are missing or whose hash no longer matches.
std::vector<std::string> verify_manifest(const std::filesystem::path& dir);

}  // namespace bend::cli
