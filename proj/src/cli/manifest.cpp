#include "bend/cli/manifest.hpp"

#include "bend/error.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <memory>

namespace bend::cli {

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1)
        throw Error(ErrorKind::Io, "sha256 initialisation failed");
    std::array<char, 1 << 16> buf;
    while (in) {
        in.read(buf.data(), buf.size());
        if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    std::array<unsigned char, EVP_MAX_MD_SIZE> md;
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), md.data(), &len);
    std::string hex;
    char byte[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(byte, sizeof byte, "%02x", md[i]);
        hex += byte;
    }
    return hex;
}

RunManifest write_manifest(const std::filesystem::path& dir, const std::string& command, const nlohmann::json& config,
                           const std::vector<std::uint64_t>& seeds, const std::vector<std::string>& files) {
    RunManifest m{command, config, seeds, {}};
    nlohmann::json inventory = nlohmann::json::array();
    for (const std::string& f : files) {
        const auto full = dir / f;
        ManifestEntry e{f, sha256_file(full), std::filesystem::file_size(full)};
        inventory.push_back({{"path", e.path}, {"sha256", e.sha256}, {"bytes", e.bytes}});
        m.files.push_back(std::move(e));
    }
    const nlohmann::json j{{"tool", "bend"},
                           {"tool_version", m.tool_version},
                           {"command", command},
                           {"config", config},
                           {"seeds", seeds},
                           {"files", inventory}};
    std::ofstream out(dir / "manifest.json");
    out << j.dump(2) << '\n';
    if (!out) throw Error(ErrorKind::Io, "cannot write " + (dir / "manifest.json").string());
    return m;
}

RunManifest read_manifest(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw Error(ErrorKind::Io, "no manifest in " + dir.string());
    try {
        const auto j = nlohmann::json::parse(in);
        RunManifest m{j.at("command").get<std::string>(), j.at("config"),
                      j.at("seeds").get<std::vector<std::uint64_t>>(), {}, j.at("tool_version").get<std::string>()};
        for (const auto& f : j.at("files"))
            m.files.push_back({f.at("path").get<std::string>(), f.at("sha256").get<std::string>(),
                               f.at("bytes").get<std::uintmax_t>()});
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Parse, "malformed manifest: " + std::string(e.what()));
    }
}

std::vector<std::string> verify_manifest(const std::filesystem::path& dir) {
    std::vector<std::string> bad;
    for (const auto& f : read_manifest(dir).files) {
        const auto full = dir / f.path;
        if (!std::filesystem::exists(full) || sha256_file(full) != f.sha256) bad.push_back(f.path);
    }
    return bad;
}

}  // namespace bend::cli
