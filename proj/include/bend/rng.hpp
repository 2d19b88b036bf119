#pragma once

#include <array>
#include <cstdint>
#include <span>

namespace bend::rng {

using Counter = std::array<std::uint32_t, 4>;
using Key = std::array<std::uint32_t, 2>;

/// Philox4x32 with 10 rounds (Salmon et al., Random123). Pure function of
/// (counter, key), so any element of a stream can be produced independently.
Counter philox4x32(Counter counter, Key key) noexcept;

/// A keyed stream addressed by (stream id, block index). Each block yields
/// four 32-bit words.
class CounterStream {
public:
    CounterStream(std::uint64_t seed, std::uint64_t stream) noexcept;

    Counter block(std::uint64_t index) const noexcept;

    /// Fills `out` with standard-normal draws (Box-Muller, two per block).
    void fill_normal(std::span<double> out) const;
    /// Fills `out` with draws uniform on [lo, hi).
    void fill_uniform(std::span<double> out, double lo, double hi) const;

private:
    Key key_;
    std::uint64_t stream_;
};

/// Maps two 32-bit words to a double in (0, 1] with 53 random bits.
double to_unit_open_closed(std::uint32_t hi, std::uint32_t lo) noexcept;

}  // namespace bend::rng
