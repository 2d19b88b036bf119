#pragma once

#include "bend/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace bend {

/// 8-bit RGB raster, row-major, 3 bytes per pixel.
struct RgbImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;

    friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

/// Clamps to [-1, 1] and maps linearly onto 0..255 (-1 -> 0, +1 -> 255).
std::uint8_t to_pixel(double value) noexcept;

RgbImage to_rgb(const ImageBatch& images, std::size_t index);

/// Row-major tiling with `gutter` zero pixels between neighbouring tiles.
RgbImage tile_grid(const ImageBatch& images, std::size_t columns, std::size_t gutter = 2);
/// Stacks images vertically with the same gutter; all must share a width.
RgbImage stack_rows(const std::vector<RgbImage>& rows, std::size_t gutter = 2);

/// Throws Io on failure.
void write_png(const RgbImage& image, const std::filesystem::path& path);
RgbImage read_png(const std::filesystem::path& path);

void export_grid(const ImageBatch& images, std::size_t columns, const std::filesystem::path& path);

/// Smallest column count c with c * c >= count.
std::size_t square_columns(std::size_t count);

}  // namespace bend
