#ifndef GLAM_IMAGE_HPP
#define GLAM_IMAGE_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

namespace glam {

/// Grayscale image, rows = height, cols = width. Column index runs along the
/// anterior-posterior axis (chest wall at column 0) for mammography views.
using Image = Eigen::ArrayXXf;
using Mask = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Writes a 16-bit grayscale PNG; values are clamped to [0, 1] then scaled to 65535.
void write_png16(const std::filesystem::path& path, const Image& image);

/// Reads an 8- or 16-bit grayscale PNG into [0, 1].
Image read_png(const std::filesystem::path& path);

/// Writes an 8-bit RGB PNG from three channel images in [0, 1].
void write_png_rgb(const std::filesystem::path& path, const Image& r, const Image& g, const Image& b);

}  // namespace glam

#endif  // GLAM_IMAGE_HPP
