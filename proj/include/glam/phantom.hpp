#ifndef GLAM_PHANTOM_HPP
#define GLAM_PHANTOM_HPP

#include "glam/image.hpp"
#include "glam/report.hpp"
#include "glam/tensor.hpp"

#include <array>
#include <cstdint>
#include <random>
#include <vector>

namespace glam {

/// Dense 3D scalar volume indexed (x, y, z) with x fastest.
/// x runs along the AP axis (chest wall at x = 0), y along ML, z along CC.
class Volume {
public:
    Volume() = default;
    Volume(int nx, int ny, int nz, float fill = 0.0f)
        : nx_(nx), ny_(ny), nz_(nz), data_(static_cast<std::size_t>(nx) * ny * nz, fill)
    {
    }

    [[nodiscard]] int nx() const { return nx_; }
    [[nodiscard]] int ny() const { return ny_; }
    [[nodiscard]] int nz() const { return nz_; }
    [[nodiscard]] std::size_t size() const { return data_.size(); }

    float& operator()(int x, int y, int z) { return data_[index(x, y, z)]; }
    float operator()(int x, int y, int z) const { return data_[index(x, y, z)]; }

    [[nodiscard]] const std::vector<float>& data() const { return data_; }
    std::vector<float>& data() { return data_; }

    /// Trilinear sample; zero outside the volume.
    [[nodiscard]] float sample(float x, float y, float z) const;

private:
    [[nodiscard]] std::size_t index(int x, int y, int z) const
    {
        return (static_cast<std::size_t>(z) * ny_ + y) * nx_ + x;
    }

    int nx_ = 0, ny_ = 0, nz_ = 0;
    std::vector<float> data_;
};

struct Roi {
    std::array<float, 3> center{};  ///< (x, y, z) voxels
    float radius = 1.0f;
    float intensity = 1.0f;
    RoiKind kind = RoiKind::Mass;
};

/// Pectoral wedge in the MLO image: the triangle with the chest-wall corner
/// (column 0, row 0) and intercepts `apExtent` along the top edge and
/// `obliqueExtent` down the chest-wall edge, both in pixels.
struct PectoralWedge {
    float apExtent = 16.0f;
    float obliqueExtent = 32.0f;
    float intensity = 0.9f;
};

struct PhantomConfig {
    int nx = 64, ny = 64, nz = 64;
    int roiCountMin = 0;
    int roiCountMax = 2;
    std::array<double, 4> densityProbs{0.25, 0.25, 0.25, 0.25};
    double massProb = 0.5;
    float massRadiusMin = 3.0f, massRadiusMax = 5.0f;
    float calcRadiusMin = 2.5f, calcRadiusMax = 3.5f;
    float pectoralIntensity = 0.9f;
    float wedgeApMin = 0.30f, wedgeApMax = 0.45f;          ///< fraction of image width
    float wedgeObliqueMin = 0.60f, wedgeObliqueMax = 0.80f;  ///< fraction of image height
    double mloAngleMin = 45.0, mloAngleMax = 45.0;

    void validate() const;
};

struct Phantom {
    Volume volume;
    int densityClass = 0;
    std::vector<Roi> rois;
    PectoralWedge pectoralWedge;
    Laterality laterality = Laterality::Left;
    std::uint64_t seed = 0;

    [[nodiscard]] std::vector<RoiKind> roiKinds() const;
    [[nodiscard]] int biradsLikeLabel() const { return birads_like_label(roiKinds()); }
};

/// Half-ellipsoid breast support touching the x = 0 plane.
struct BreastSupport {
    float ax, ay, az, cy, cz;

    explicit BreastSupport(int nx, int ny, int nz);
    [[nodiscard]] bool contains(float x, float y, float z) const;
};

/// Tissue intensities stay in [0, kTissueMax]; ROIs may reach 1.
inline constexpr float kTissueMax = 0.7f;
/// Peak of the rescaled MLO projection, below kTissueMax so the wedge edge
/// keeps a step of at least a third of the wedge intensity.
inline constexpr float kMloPeak = 0.6f;

Phantom generate_phantom(std::uint64_t seed, const PhantomConfig& config);

/// Mean projection along z, before any rescale. rows = y, cols = x.
Image project_cc_raw(const Volume& volume);

/// Mean projection along z rescaled so the maximum is 1.
Image project_cc(const Phantom& p);

struct ObliqueGeometry {
    double angleDeg;
    double cy, cz;  ///< volume centre in the Y-Z plane
    int rows;

    /// Signed oblique coordinate of (y, z) mapped to a fractional image row.
    [[nodiscard]] double row(double y, double z) const;
};

ObliqueGeometry oblique_geometry(const Volume& volume, double angleDeg);

/// Mean projection along (0, sin a, cos a), before rescale.
Image project_mlo_raw(const Volume& volume, double angleDeg);

struct MloProjection {
    Image image;
    Mask pectoralMask;
};

/// Oblique projection scaled into the tissue range, with the pectoral wedge
/// composited at the chest-wall corner.
MloProjection project_mlo(const Phantom& p, double angleDeg = 45.0);

/// Wedge membership of pixel (row, col) using pixel centres.
bool in_wedge(const PectoralWedge& w, int row, int col);

struct Box {
    int row0, col0, row1, col1;  ///< inclusive
};

struct RoiGroundTruth {
    RoiKind kind;
    float radius;
    int ccColumn, mloColumn;
    int ccRow, mloRow;
    Box ccBox, mloBox;
};

struct RawViewPair {
    Image imageCC;
    Image imageMLO;
    double mloAngleDeg = 45.0;
    std::vector<RoiGroundTruth> groundTruth;
    Mask pectoralMask;
    std::array<float, 2> chestPoint{};   ///< MLO landmarks (x = column, y = row)
    std::array<float, 2> nipplePoint{};
};

RawViewPair project_pair(const Phantom& p, double mloAngleDeg);

}  // namespace glam

#endif  // GLAM_PHANTOM_HPP
