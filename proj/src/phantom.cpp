#include "glam/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace glam {

namespace {

constexpr std::array<float, 4> kGlandFraction{0.08f, 0.25f, 0.5f, 0.75f};
constexpr float kFat = 0.15f;
constexpr float kGland = 0.4f;
constexpr int kNoiseCells = 8;

double deg2rad(double deg) { return deg * std::numbers::pi / 180.0; }

// Smooth random field in [0, 1): trilinear upsampling of a coarse lattice.
Volume smooth_noise(int nx, int ny, int nz, std::mt19937_64& rng)
{
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    const int c = kNoiseCells + 1;
    Volume coarse(c, c, c);
    for (auto& v : coarse.data()) {
        v = u(rng);
    }
    Volume out(nx, ny, nz);
    const float sx = static_cast<float>(kNoiseCells) / static_cast<float>(nx - 1);
    const float sy = static_cast<float>(kNoiseCells) / static_cast<float>(ny - 1);
    const float sz = static_cast<float>(kNoiseCells) / static_cast<float>(nz - 1);
    for (int z = 0; z < nz; ++z) {
        for (int y = 0; y < ny; ++y) {
            for (int x = 0; x < nx; ++x) {
                out(x, y, z) = coarse.sample(x * sx, y * sy, z * sz);
            }
        }
    }
    return out;
}

bool ball_inside(const BreastSupport& s, const Roi& r, int nx, int ny, int nz)
{
    const int rad = static_cast<int>(std::ceil(r.radius));
    for (int dz = -rad; dz <= rad; ++dz) {
        for (int dy = -rad; dy <= rad; ++dy) {
            for (int dx = -rad; dx <= rad; ++dx) {
                if (dx * dx + dy * dy + dz * dz > r.radius * r.radius) {
                    continue;
                }
                const int x = static_cast<int>(std::lround(r.center[0])) + dx;
                const int y = static_cast<int>(std::lround(r.center[1])) + dy;
                const int z = static_cast<int>(std::lround(r.center[2])) + dz;
                if (x < 0 || y < 0 || z < 0 || x >= nx || y >= ny || z >= nz ||
                    !s.contains(static_cast<float>(x), static_cast<float>(y), static_cast<float>(z))) {
                    return false;
                }
            }
        }
    }
    return true;
}

void paint_ball(Volume& v, std::array<float, 3> c, float radius, float intensity)
{
    const int rad = static_cast<int>(std::ceil(radius));
    const int cx = static_cast<int>(std::lround(c[0]));
    const int cy = static_cast<int>(std::lround(c[1]));
    const int cz = static_cast<int>(std::lround(c[2]));
    for (int dz = -rad; dz <= rad; ++dz) {
        for (int dy = -rad; dy <= rad; ++dy) {
            for (int dx = -rad; dx <= rad; ++dx) {
                const int x = cx + dx, y = cy + dy, z = cz + dz;
                if (dx * dx + dy * dy + dz * dz <= radius * radius && x >= 0 && y >= 0 && z >= 0 && x < v.nx() &&
                    y < v.ny() && z < v.nz()) {
                    v(x, y, z) = intensity;
                }
            }
        }
    }
}

Box clip_box(int row, int col, float radius, int rows, int cols)
{
    const int r = static_cast<int>(std::ceil(radius));
    return {std::max(0, row - r), std::max(0, col - r), std::min(rows - 1, row + r), std::min(cols - 1, col + r)};
}

}  // namespace

float Volume::sample(float x, float y, float z) const
{
    const float fx = std::floor(x), fy = std::floor(y), fz = std::floor(z);
    const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy), z0 = static_cast<int>(fz);
    const float tx = x - fx, ty = y - fy, tz = z - fz;
    float acc = 0.0f;
    for (int k = 0; k < 8; ++k) {
        const int xi = x0 + (k & 1), yi = y0 + ((k >> 1) & 1), zi = z0 + ((k >> 2) & 1);
        if (xi < 0 || yi < 0 || zi < 0 || xi >= nx_ || yi >= ny_ || zi >= nz_) {
            continue;
        }
        const float w = ((k & 1) ? tx : 1 - tx) * (((k >> 1) & 1) ? ty : 1 - ty) * (((k >> 2) & 1) ? tz : 1 - tz);
        if (w != 0.0f) {
            acc += w * (*this)(xi, yi, zi);
        }
    }
    return acc;
}

void PhantomConfig::validate() const
{
    if (nx < 8 || ny < 8 || nz < 8) {
        throw ConfigError("phantom: every volume dimension must be at least 8");
    }
    if (roiCountMin < 0 || roiCountMax < roiCountMin) {
        throw ConfigError("phantom: invalid ROI count range");
    }
    double total = 0;
    for (double p : densityProbs) {
        if (p < 0) {
            throw ConfigError("phantom: negative density probability");
        }
        total += p;
    }
    if (total <= 0) {
        throw ConfigError("phantom: density probabilities sum to zero");
    }
    if (massProb < 0 || massProb > 1) {
        throw ConfigError("phantom: massProb outside [0, 1]");
    }
    if (massRadiusMin < 1 || massRadiusMax < massRadiusMin || calcRadiusMin < 1 || calcRadiusMax < calcRadiusMin) {
        throw ConfigError("phantom: ROI radius must be at least 1");
    }
    if (pectoralIntensity <= kTissueMax || pectoralIntensity > 1) {
        throw ConfigError("phantom: pectoral intensity must lie in (0.7, 1]");
    }
    if (wedgeApMin <= 0 || wedgeApMax < wedgeApMin || wedgeApMax > 1 || wedgeObliqueMin <= 0 ||
        wedgeObliqueMax < wedgeObliqueMin || wedgeObliqueMax > 1) {
        throw ConfigError("phantom: invalid wedge extent range");
    }
    if (mloAngleMin < 30 || mloAngleMax > 60 || mloAngleMax < mloAngleMin) {
        throw ConfigError("phantom: MLO angle range must lie in [30, 60]");
    }
}

std::vector<RoiKind> Phantom::roiKinds() const
{
    std::vector<RoiKind> kinds;
    kinds.reserve(rois.size());
    for (const auto& r : rois) {
        kinds.push_back(r.kind);
    }
    return kinds;
}

BreastSupport::BreastSupport(int nx, int ny, int nz)
    : ax(0.9f * static_cast<float>(nx - 1)),
      ay(0.45f * static_cast<float>(ny)),
      az(0.45f * static_cast<float>(nz)),
      cy(0.5f * static_cast<float>(ny - 1)),
      cz(0.5f * static_cast<float>(nz - 1))
{
}

bool BreastSupport::contains(float x, float y, float z) const
{
    if (x < 0) {
        return false;
    }
    const float u = x / ax, v = (y - cy) / ay, w = (z - cz) / az;
    return u * u + v * v + w * w <= 1.0f;
}

Phantom generate_phantom(std::uint64_t seed, const PhantomConfig& config)
{
    config.validate();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);

    Phantom p;
    p.seed = seed;
    p.densityClass = std::discrete_distribution<int>(config.densityProbs.begin(), config.densityProbs.end())(rng);
    p.laterality = u(rng) < 0.5f ? Laterality::Left : Laterality::Right;

    const int nx = config.nx, ny = config.ny, nz = config.nz;
    const BreastSupport support(nx, ny, nz);
    Volume noise = smooth_noise(nx, ny, nz, rng);

    std::vector<float> inside;
    for (int z = 0; z < nz; ++z) {
        for (int y = 0; y < ny; ++y) {
            for (int x = 0; x < nx; ++x) {
                if (support.contains(static_cast<float>(x), static_cast<float>(y), static_cast<float>(z))) {
                    inside.push_back(noise(x, y, z));
                }
            }
        }
    }
    float threshold = 1.0f;
    if (!inside.empty()) {
        const auto k = static_cast<std::size_t>((1.0f - kGlandFraction[p.densityClass]) *
                                                static_cast<float>(inside.size() - 1));
        std::nth_element(inside.begin(), inside.begin() + static_cast<std::ptrdiff_t>(k), inside.end());
        threshold = inside[k];
    }

    p.volume = Volume(nx, ny, nz);
    for (int z = 0; z < nz; ++z) {
        for (int y = 0; y < ny; ++y) {
            for (int x = 0; x < nx; ++x) {
                if (support.contains(static_cast<float>(x), static_cast<float>(y), static_cast<float>(z))) {
                    p.volume(x, y, z) = noise(x, y, z) > threshold ? kGland : kFat;
                }
            }
        }
    }

    p.pectoralWedge.intensity = config.pectoralIntensity;
    p.pectoralWedge.apExtent =
        static_cast<float>(nx) * (config.wedgeApMin + (config.wedgeApMax - config.wedgeApMin) * u(rng));
    p.pectoralWedge.obliqueExtent =
        static_cast<float>(ny) * (config.wedgeObliqueMin + (config.wedgeObliqueMax - config.wedgeObliqueMin) * u(rng));

    const int count = std::uniform_int_distribution<int>(config.roiCountMin, config.roiCountMax)(rng);
    const ObliqueGeometry geom = oblique_geometry(p.volume, 0.5 * (config.mloAngleMin + config.mloAngleMax));
    for (int n = 0; n < count; ++n) {
        Roi roi;
        roi.kind = u(rng) < config.massProb ? RoiKind::Mass : RoiKind::Calcification;
        if (roi.kind == RoiKind::Mass) {
            roi.radius = config.massRadiusMin + (config.massRadiusMax - config.massRadiusMin) * u(rng);
            roi.intensity = 0.9f + 0.1f * u(rng);
        } else {
            roi.radius = config.calcRadiusMin + (config.calcRadiusMax - config.calcRadiusMin) * u(rng);
            roi.intensity = 1.0f;
        }
        bool placed = false;
        for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
            roi.center = {std::round(u(rng) * static_cast<float>(nx - 1)), std::round(u(rng) * static_cast<float>(ny - 1)),
                          std::round(u(rng) * static_cast<float>(nz - 1))};
            if (!ball_inside(support, roi, nx, ny, nz)) {
                continue;
            }
            // Keep the ROI clear of the pectoral wedge and of earlier ROIs.
            const double row = geom.row(roi.center[1], roi.center[2]);
            const float reach = roi.radius + 2.0f;
            if ((roi.center[0] - reach) / p.pectoralWedge.apExtent +
                    (static_cast<float>(row) - reach) / p.pectoralWedge.obliqueExtent <
                1.0f) {
                continue;
            }
            bool clear = true;
            for (const auto& other : p.rois) {
                float d2 = 0;
                for (int a = 0; a < 3; ++a) {
                    d2 += (other.center[a] - roi.center[a]) * (other.center[a] - roi.center[a]);
                }
                clear = clear && std::sqrt(d2) > other.radius + roi.radius + 2.0f;
            }
            placed = clear;
        }
        if (!placed) {
            continue;
        }
        if (roi.kind == RoiKind::Mass) {
            paint_ball(p.volume, roi.center, roi.radius, roi.intensity);
        } else {
            // A cluster of small specks inside the ROI ball.
            const int specks = 4 + static_cast<int>(u(rng) * 3);
            for (int s = 0; s < specks; ++s) {
                std::array<float, 3> c{};
                do {
                    for (int a = 0; a < 3; ++a) {
                        c[a] = std::round(roi.center[a] + (2 * u(rng) - 1) * (roi.radius - 1));
                    }
                } while ((c[0] - roi.center[0]) * (c[0] - roi.center[0]) +
                             (c[1] - roi.center[1]) * (c[1] - roi.center[1]) +
                             (c[2] - roi.center[2]) * (c[2] - roi.center[2]) >
                         (roi.radius - 1) * (roi.radius - 1));
                paint_ball(p.volume, c, 1.5f, roi.intensity);
            }
        }
        p.rois.push_back(roi);
    }
    return p;
}

Image project_cc_raw(const Volume& volume)
{
    Image img = Image::Zero(volume.ny(), volume.nx());
    for (int z = 0; z < volume.nz(); ++z) {
        for (int y = 0; y < volume.ny(); ++y) {
            for (int x = 0; x < volume.nx(); ++x) {
                img(y, x) += volume(x, y, z);
            }
        }
    }
    return img / static_cast<float>(volume.nz());
}

Image project_cc(const Phantom& p)
{
    Image img = project_cc_raw(p.volume);
    const float mx = img.maxCoeff();
    if (mx > 0) {
        img /= mx;
    }
    return img;
}

double ObliqueGeometry::row(double y, double z) const
{
    const double a = deg2rad(angleDeg);
    const double s = (y - cy) * std::cos(a) - (z - cz) * std::sin(a);
    return s + 0.5 * (rows - 1);
}

ObliqueGeometry oblique_geometry(const Volume& volume, double angleDeg)
{
    return {angleDeg, 0.5 * (volume.ny() - 1), 0.5 * (volume.nz() - 1), volume.ny()};
}

Image project_mlo_raw(const Volume& volume, double angleDeg)
{
    if (!(angleDeg >= 30.0 && angleDeg <= 60.0)) {
        throw ConfigError("project_mlo: angle must lie in [30, 60] degrees");
    }
    const ObliqueGeometry g = oblique_geometry(volume, angleDeg);
    const double a = deg2rad(angleDeg);
    const double dy = std::sin(a), dz = std::cos(a);    // ray direction
    const double ny_ = std::cos(a), nz_ = -std::sin(a);  // oblique image axis
    const int half = static_cast<int>(std::ceil(0.5 * std::hypot(volume.ny(), volume.nz()))) + 1;
    Image img = Image::Zero(g.rows, volume.nx());
    for (int r = 0; r < g.rows; ++r) {
        const double s = r - 0.5 * (g.rows - 1);
        for (int t = -half; t <= half; ++t) {
            const auto y = static_cast<float>(g.cy + s * ny_ + t * dy);
            const auto z = static_cast<float>(g.cz + s * nz_ + t * dz);
            if (y <= -1 || z <= -1 || y >= volume.ny() || z >= volume.nz()) {
                continue;
            }
            for (int x = 0; x < volume.nx(); ++x) {
                img(r, x) += volume.sample(static_cast<float>(x), y, z);
            }
        }
    }
    return img / static_cast<float>(volume.nz());
}

bool in_wedge(const PectoralWedge& w, int row, int col)
{
    return (col + 0.5f) / w.apExtent + (row + 0.5f) / w.obliqueExtent < 1.0f;
}

MloProjection project_mlo(const Phantom& p, double angleDeg)
{
    MloProjection out;
    out.image = project_mlo_raw(p.volume, angleDeg);
    const float mx = out.image.maxCoeff();
    if (mx > 0) {
        out.image *= kMloPeak / mx;
    }
    out.pectoralMask = Mask::Zero(out.image.rows(), out.image.cols());
    for (Index r = 0; r < out.image.rows(); ++r) {
        for (Index c = 0; c < out.image.cols(); ++c) {
            if (in_wedge(p.pectoralWedge, static_cast<int>(r), static_cast<int>(c))) {
                out.pectoralMask(r, c) = 1;
                out.image(r, c) = p.pectoralWedge.intensity;
            }
        }
    }
    // The wedge always covers the corner pixel, even for tiny extents.
    if (!out.pectoralMask(0, 0)) {
        out.pectoralMask(0, 0) = 1;
        out.image(0, 0) = p.pectoralWedge.intensity;
    }
    return out;
}

RawViewPair project_pair(const Phantom& p, double mloAngleDeg)
{
    RawViewPair pair;
    pair.imageCC = project_cc(p);
    auto mlo = project_mlo(p, mloAngleDeg);
    pair.imageMLO = std::move(mlo.image);
    pair.pectoralMask = std::move(mlo.pectoralMask);
    pair.mloAngleDeg = mloAngleDeg;

    const ObliqueGeometry g = oblique_geometry(p.volume, mloAngleDeg);
    const BreastSupport support(p.volume.nx(), p.volume.ny(), p.volume.nz());
    const int rows = static_cast<int>(pair.imageCC.rows()), cols = static_cast<int>(pair.imageCC.cols());
    const int mloRows = static_cast<int>(pair.imageMLO.rows());
    for (const auto& roi : p.rois) {
        RoiGroundTruth gt{};
        gt.kind = roi.kind;
        gt.radius = roi.radius;
        gt.ccColumn = gt.mloColumn = static_cast<int>(std::lround(roi.center[0]));
        gt.ccRow = static_cast<int>(std::lround(roi.center[1]));
        gt.mloRow = static_cast<int>(std::lround(g.row(roi.center[1], roi.center[2])));
        gt.ccBox = clip_box(gt.ccRow, gt.ccColumn, roi.radius, rows, cols);
        gt.mloBox = clip_box(gt.mloRow, gt.mloColumn, roi.radius, mloRows, cols);
        pair.groundTruth.push_back(gt);
    }
    const auto centreRow = static_cast<float>(g.row(support.cy, support.cz));
    pair.chestPoint = {0.0f, centreRow};
    pair.nipplePoint = {support.ax, centreRow};
    return pair;
}

}  // namespace glam
