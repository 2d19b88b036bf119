#include "bend/archive.hpp"

#include "bend/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <system_error>

namespace bend::archive {

namespace {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

template <class T>
void append_raw(std::vector<unsigned char>& out, T v) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    out.insert(out.end(), bytes, bytes + sizeof(T));
}

template <class T>
T read_raw(const std::vector<unsigned char>& data, std::size_t offset) {
    T v;
    std::memcpy(&v, data.data() + offset, sizeof(T));
    return v;
}

constexpr std::size_t kPrefix = 8 + 4 + 8;

}  // namespace

void append_f64(std::vector<unsigned char>& out, double v) { append_raw(out, v); }
void append_f32(std::vector<unsigned char>& out, float v) { append_raw(out, v); }

std::vector<double> read_f64(const std::vector<unsigned char>& payload, std::size_t offset, std::size_t count) {
    if (offset > payload.size() || count > (payload.size() - offset) / 8)
        throw Error(ErrorKind::Parse, "archive payload truncated");
    std::vector<double> out(count);
    std::memcpy(out.data(), payload.data() + offset, count * 8);
    return out;
}

std::vector<double> read_f32(const std::vector<unsigned char>& payload, std::size_t offset, std::size_t count) {
    if (offset > payload.size() || count > (payload.size() - offset) / 4)
        throw Error(ErrorKind::Parse, "archive payload truncated");
    std::vector<double> out(count);
    for (std::size_t i = 0; i < count; ++i) out[i] = read_raw<float>(payload, offset + 4 * i);
    return out;
}

void write(const std::filesystem::path& path, const Magic& magic, std::uint32_t version, const nlohmann::json& header,
           const std::vector<unsigned char>& payload) {
    const std::string text = header.dump();
    std::vector<unsigned char> prefix(magic.begin(), magic.end());
    append_raw<std::uint32_t>(prefix, version);
    append_raw<std::uint64_t>(prefix, text.size());

    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorKind::Io, "cannot open " + tmp.string() + " for writing");
        out.write(reinterpret_cast<const char*>(prefix.data()), static_cast<std::streamsize>(prefix.size()));
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
        if (!out) throw Error(ErrorKind::Io, "write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw Error(ErrorKind::Io, "cannot rename into " + path.string() + ": " + ec.message());
}

Contents read(const std::filesystem::path& path, const Magic& magic) {
    std::error_code ec;
    if (!std::filesystem::is_regular_file(path, ec))
        throw Error(ErrorKind::Io, "no such file: " + path.string());
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
    std::vector<unsigned char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (data.size() < kPrefix || !std::equal(magic.begin(), magic.end(), data.begin()))
        throw Error(ErrorKind::Parse, path.string() + " is not a " + std::string(magic.data(), 8) + " archive");
    Contents c;
    c.version = read_raw<std::uint32_t>(data, 8);
    const auto header_len = read_raw<std::uint64_t>(data, 12);
    if (header_len > data.size() - kPrefix) throw Error(ErrorKind::Parse, path.string() + ": truncated header");
    const auto begin = data.begin() + static_cast<std::ptrdiff_t>(kPrefix);
    const auto end = begin + static_cast<std::ptrdiff_t>(header_len);
    try {
        c.header = nlohmann::json::parse(begin, end);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Parse, path.string() + ": bad header: " + e.what());
    }
    c.payload.assign(end, data.end());
    return c;
}

bool has_magic(const std::filesystem::path& path, const Magic& magic) {
    std::ifstream in(path, std::ios::binary);
    Magic head{};
    if (!in.read(head.data(), 8)) return false;
    return head == magic;
}

}  // namespace bend::archive
