#include "bend/image_io.hpp"

#include "bend/error.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

namespace bend {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const noexcept { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

std::uint8_t to_pixel(double value) noexcept {
    if (std::isnan(value)) return 0;
    const double v = std::clamp(value, -1.0, 1.0);
    return static_cast<std::uint8_t>(std::lround((v + 1.0) * 127.5));
}

RgbImage to_rgb(const ImageBatch& images, std::size_t index) {
    if (images.channels() != 3 || index >= images.batch())
        throw Error(ErrorKind::Shape, "to_rgb: need a [B, 3, H, W] batch, got " + images.shape_string());
    RgbImage img{images.width(), images.height(), std::vector<std::uint8_t>(images.plane() * 3)};
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
            for (std::size_t c = 0; c < 3; ++c) img.pixels[(y * img.width + x) * 3 + c] = to_pixel(images(index, c, y, x));
    return img;
}

RgbImage tile_grid(const ImageBatch& images, std::size_t columns, std::size_t gutter) {
    if (columns < 1) throw Error(ErrorKind::InvalidConfig, "grid needs at least one column");
    if (images.batch() < 1) throw Error(ErrorKind::Shape, "grid needs at least one image");
    const std::size_t n = images.batch(), cols = std::min(columns, n), rows = (n + cols - 1) / cols;
    const std::size_t h = images.height(), w = images.width();
    RgbImage grid{cols * w + (cols - 1) * gutter, rows * h + (rows - 1) * gutter, {}};
    grid.pixels.assign(grid.width * grid.height * 3, 0);
    for (std::size_t k = 0; k < n; ++k) {
        const RgbImage tile = to_rgb(images, k);
        const std::size_t x0 = (k % cols) * (w + gutter), y0 = (k / cols) * (h + gutter);
        for (std::size_t y = 0; y < h; ++y)
            std::copy_n(tile.pixels.begin() + static_cast<std::ptrdiff_t>(y * w * 3), w * 3,
                        grid.pixels.begin() + static_cast<std::ptrdiff_t>(((y0 + y) * grid.width + x0) * 3));
    }
    return grid;
}

RgbImage stack_rows(const std::vector<RgbImage>& rows, std::size_t gutter) {
    if (rows.empty()) throw Error(ErrorKind::Shape, "nothing to stack");
    RgbImage out{rows.front().width, 0, {}};
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].width != out.width) throw Error(ErrorKind::Shape, "stacked rows must share a width");
        if (r > 0) out.pixels.insert(out.pixels.end(), gutter * out.width * 3, 0);
        out.pixels.insert(out.pixels.end(), rows[r].pixels.begin(), rows[r].pixels.end());
        out.height += rows[r].height + (r > 0 ? gutter : 0);
    }
    return out;
}

void write_png(const RgbImage& image, const std::filesystem::path& path) {
    FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw Error(ErrorKind::Io, "libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error(ErrorKind::Io, "failed writing " + path.string());
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t y = 0; y < image.height; ++y)
        png_write_row(png, const_cast<png_bytep>(image.pixels.data() + y * image.width * 3));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

RgbImage read_png(const std::filesystem::path& path) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str()))
        throw Error(ErrorKind::Io, "cannot read " + path.string() + ": " + img.message);
    img.format = PNG_FORMAT_RGB;
    RgbImage out{img.width, img.height, std::vector<std::uint8_t>(PNG_IMAGE_SIZE(img))};
    if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
        png_image_free(&img);
        throw Error(ErrorKind::Io, "cannot decode " + path.string() + ": " + img.message);
    }
    return out;
}

void export_grid(const ImageBatch& images, std::size_t columns, const std::filesystem::path& path) {
    write_png(tile_grid(images, columns), path);
}

std::size_t square_columns(std::size_t count) {
    std::size_t c = 1;
    while (c * c < count) ++c;
    return c;
}

}  // namespace bend
