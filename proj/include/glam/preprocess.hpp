#ifndef GLAM_PREPROCESS_HPP
#define GLAM_PREPROCESS_HPP

#include "glam/image.hpp"
#include "glam/tensor.hpp"

#include <array>
#include <random>
#include <stdexcept>
#include <utility>

namespace glam {

class NoPectoralLine : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DegenerateLandmarks : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Line x*cos(theta) + y*sin(theta) = rho in pixel-centre coordinates
/// (x = column, y = row).
struct LineParams {
    double rho = 0;
    double thetaDeg = 0;
    int score = 0;
};

struct HoughConfig {
    double edgeThreshold = 0.3;  ///< on gradient magnitude normalised by its maximum
    double minVotesFrac = 0.5;   ///< minVotes = minVotesFrac * image height
    bool refine = true;          ///< weighted least-squares polish of the peak line
};

/// Gradient magnitude by central differences, edges clamped.
Image gradient_magnitude(const Image& image);

/// Full (rho, theta) accumulator over theta = 0..179 deg and integer rho
/// bins in [-diag, diag]. Row t holds theta = t degrees; column r holds
/// rho = r - diag.
Eigen::ArrayXXi hough_accumulator(const Image& edges);

/// Edge pixels of `image` under the configured threshold (1 = edge).
Image edge_map(const Image& image, const HoughConfig& cfg = {});

/// True when the line cuts the top edge and the chest-wall (left) edge, so
/// its near side is a wedge at the (0, 0) corner.
bool wedge_at_corner(const LineParams& line, Index rows, Index cols);

LineParams detect_pectoral_line(const Image& image, const HoughConfig& cfg = {});

/// Pixel (row, col) lies on the chest-corner side of the line.
bool on_corner_side(const LineParams& line, Index row, Index col);

Image remove_pectoral(const Image& image, const LineParams& line);

struct Point2 {
    double x = 0;  ///< column
    double y = 0;  ///< row
};

/// Chest point = midpoint of the supported part of column 0; nipple point =
/// support pixel farthest from the chest wall.
std::pair<Point2, Point2> estimate_landmarks(const Image& image, float supportThreshold = 1e-3f);

/// Angle of chest -> nipple against the +x (AP) axis, degrees.
double ap_angle_deg(Point2 chest, Point2 nipple);

/// Rotation by -ap_angle about the image centre, applied to a point.
Point2 align_point(Point2 p, double angleDeg, Index rows, Index cols);

Image align_ap(const Image& image, Point2 chest, Point2 nipple);

struct AffineParams {
    double rotationDeg = 0;
    std::array<double, 2> translate{0, 0};  ///< (dx, dy) pixels
    double scale = 1;
    double shearDeg = 0;
};

struct AffineRanges {
    double rotationDeg = 5;
    double translate = 4;  ///< pixels at 128 x 128, scaled with image size
    double scaleMin = 0.95, scaleMax = 1.05;
    double shearDeg = 2;

    static AffineRanges zero() { return {0, 0, 1, 1, 0}; }
    void validate() const;
};

/// Forward map of a point: A (p - c) + c + t with A = R(rot) Shear(shear) scale.
Point2 affine_point(const AffineParams& a, Point2 p, Index rows, Index cols);

Image apply_affine(const Image& image, const AffineParams& a);

AffineParams sample_affine(std::mt19937_64& rng, const AffineRanges& ranges, Index rows, Index cols);

std::pair<Image, AffineParams> random_affine(const Image& image, std::mt19937_64& rng, const AffineRanges& ranges);

/// Bilinear sample with zero outside the image.
float bilinear_zero(const Image& image, double x, double y);

/// Half-pixel bilinear resize with edge clamping.
Image resize_bilinear(const Image& image, Index rows, Index cols);

/// Resize then standardise to zero mean, unit variance (variance floor 1e-6).
Image normalize_resize(const Image& image, Index rows, Index cols);

struct PreprocessConfig {
    HoughConfig hough;
    AffineRanges affine;
    bool sharedAffine = false;
    int targetSize = 128;
};

struct ViewPairImages {
    Image cc;
    Image mlo;
};

/// Fixed pipeline: pectoral removal and AP alignment on MLO, optional
/// random affine on both views, then resize and standardise. `rng` null
/// means evaluation (no affine).
ViewPairImages preprocess_pair(const Image& rawCC, const Image& rawMLO, Point2 chest, Point2 nipple,
                               const PreprocessConfig& cfg, std::mt19937_64* rng);

}  // namespace glam

#endif  // GLAM_PREPROCESS_HPP
