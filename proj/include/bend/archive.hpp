#pragma once

// Binary container shared by BM checkpoints and generator archives:
//
//   offset 0   8 bytes   magic (e.g. "BENDCKPT")
//   offset 8   u32 LE    format version
//   offset 12  u64 LE    header length N
//   offset 20  N bytes   UTF-8 JSON header
//   then                 raw little-endian payload, laid out as the header says
//
// Writes go to "<path>.tmp" and are renamed into place.

#include "json.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace bend::archive {

using Magic = std::array<char, 8>;

struct Contents {
    std::uint32_t version = 0;
    nlohmann::json header;
    std::vector<unsigned char> payload;
};

void write(const std::filesystem::path& path, const Magic& magic, std::uint32_t version, const nlohmann::json& header,
           const std::vector<unsigned char>& payload);

/// Throws Io if the file cannot be read, Parse on a bad magic or truncation.
/// The version is returned unchecked.
Contents read(const std::filesystem::path& path, const Magic& magic);

/// True if the file starts with `magic`.
bool has_magic(const std::filesystem::path& path, const Magic& magic);

void append_f64(std::vector<unsigned char>& out, double v);
void append_f32(std::vector<unsigned char>& out, float v);
/// Reads `count` values at `offset`; throws Parse when out of bounds.
std::vector<double> read_f64(const std::vector<unsigned char>& payload, std::size_t offset, std::size_t count);
std::vector<double> read_f32(const std::vector<unsigned char>& payload, std::size_t offset, std::size_t count);

}  // namespace bend::archive
