#include "glam/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

namespace glam {
namespace {

struct FileCloser {
    void operator()(std::FILE* f) const
    {
        if (f) {
            std::fclose(f);
        }
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode)
{
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) {
        throw IoError("cannot open " + path.string());
    }
    return f;
}

void write_rows(const std::filesystem::path& path, int width, int height, int bitDepth, int colorType,
                std::vector<std::vector<png_byte>>& rows)
{
    FilePtr f = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng init failed for " + path.string());
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng write failed for " + path.string());
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bitDepth, colorType,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (auto& row : rows) {
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    if (std::fflush(f.get()) != 0) {
        throw IoError("flush failed for " + path.string());
    }
}

}  // namespace

void write_png16(const std::filesystem::path& path, const Image& image)
{
    const int h = static_cast<int>(image.rows());
    const int w = static_cast<int>(image.cols());
    std::vector<std::vector<png_byte>> rows(static_cast<std::size_t>(h), std::vector<png_byte>(2 * w));
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const float v = std::clamp(image(r, c), 0.0f, 1.0f);
            const auto q = static_cast<std::uint16_t>(std::lround(v * 65535.0f));
            rows[r][2 * c] = static_cast<png_byte>(q >> 8);  // PNG is big-endian
            rows[r][2 * c + 1] = static_cast<png_byte>(q & 0xff);
        }
    }
    write_rows(path, w, h, 16, PNG_COLOR_TYPE_GRAY, rows);
}

void write_png_rgb(const std::filesystem::path& path, const Image& r, const Image& g, const Image& b)
{
    const int h = static_cast<int>(r.rows());
    const int w = static_cast<int>(r.cols());
    std::vector<std::vector<png_byte>> rows(static_cast<std::size_t>(h), std::vector<png_byte>(3 * w));
    auto q = [](float v) { return static_cast<png_byte>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); };
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            rows[y][3 * x] = q(r(y, x));
            rows[y][3 * x + 1] = q(g(y, x));
            rows[y][3 * x + 2] = q(b(y, x));
        }
    }
    write_rows(path, w, h, 8, PNG_COLOR_TYPE_RGB, rows);
}

Image read_png(const std::filesystem::path& path)
{
    FilePtr f = open_file(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng init failed for " + path.string());
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng read failed for " + path.string());
    }
    png_init_io(png, f.get());
    png_read_info(png, info);
    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const int depth = png_get_bit_depth(png, info);
    const int color = png_get_color_type(png, info);
    if (color != PNG_COLOR_TYPE_GRAY || (depth != 8 && depth != 16)) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("unsupported PNG format in " + path.string());
    }
    const std::size_t stride = png_get_rowbytes(png, info);
    std::vector<png_byte> row(stride);
    Image image(h, w);
    for (png_uint_32 y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (png_uint_32 x = 0; x < w; ++x) {
            if (depth == 16) {
                const unsigned v = (unsigned(row[2 * x]) << 8) | row[2 * x + 1];
                image(y, x) = static_cast<float>(v) / 65535.0f;
            } else {
                image(y, x) = static_cast<float>(row[x]) / 255.0f;
            }
        }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return image;
}

}  // namespace glam
