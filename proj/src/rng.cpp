#include "bend/rng.hpp"

#include <cmath>
#include <numbers>

namespace bend::rng {

namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) noexcept {
    const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
    hi = static_cast<std::uint32_t>(p >> 32);
    lo = static_cast<std::uint32_t>(p);
}

}  // namespace

Counter philox4x32(Counter ctr, Key key) noexcept {
    for (int round = 0; round < 10; ++round) {
        std::uint32_t hi0, lo0, hi1, lo1;
        mulhilo(kMul0, ctr[0], hi0, lo0);
        mulhilo(kMul1, ctr[2], hi1, lo1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += kWeyl0;
        key[1] += kWeyl1;
    }
    return ctr;
}

double to_unit_open_closed(std::uint32_t hi, std::uint32_t lo) noexcept {
    const std::uint64_t bits = ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 11;
    return static_cast<double>(bits + 1) * 0x1.0p-53;
}

CounterStream::CounterStream(std::uint64_t seed, std::uint64_t stream) noexcept
    : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)}, stream_(stream) {}

Counter CounterStream::block(std::uint64_t index) const noexcept {
    return philox4x32({static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                       static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)},
                      key_);
}

void CounterStream::fill_normal(std::span<double> out) const {
    for (std::size_t i = 0; i < out.size(); i += 2) {
        const Counter r = block(i / 2);
        const double u1 = to_unit_open_closed(r[0], r[1]);
        const double u2 = to_unit_open_closed(r[2], r[3]);
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        out[i] = radius * std::cos(angle);
        if (i + 1 < out.size()) out[i + 1] = radius * std::sin(angle);
    }
}

void CounterStream::fill_uniform(std::span<double> out, double lo, double hi) const {
    for (std::size_t i = 0; i < out.size(); i += 2) {
        const Counter r = block(i / 2);
        // Shift (0, 1] to [0, 1).
        out[i] = lo + (hi - lo) * (1.0 - to_unit_open_closed(r[0], r[1]));
        if (i + 1 < out.size()) out[i + 1] = lo + (hi - lo) * (1.0 - to_unit_open_closed(r[2], r[3]));
    }
}

}  // namespace bend::rng
