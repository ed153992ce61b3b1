#include "glam/preprocess.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace glam {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

Point2 centre(Index rows, Index cols) { return {0.5 * static_cast<double>(cols - 1), 0.5 * static_cast<double>(rows - 1)}; }

// Weighted total-least-squares line through edge pixels near `line`.
LineParams refine_line(const LineParams& line, const Image& grad, const Image& edges)
{
    const double c = std::cos(line.thetaDeg * kDeg), s = std::sin(line.thetaDeg * kDeg);
    double wsum = 0, mx = 0, my = 0;
    std::vector<std::array<double, 3>> pts;
    for (Index r = 0; r < edges.rows(); ++r) {
        for (Index k = 0; k < edges.cols(); ++k) {
            if (edges(r, k) == 0) {
                continue;
            }
            const double x = static_cast<double>(k), y = static_cast<double>(r);
            if (std::abs(x * c + y * s - line.rho) > 1.5) {
                continue;
            }
            const double w = grad(r, k);
            pts.push_back({x, y, w});
            wsum += w;
            mx += w * x;
            my += w * y;
        }
    }
    if (pts.size() < 3 || wsum <= 0) {
        return line;
    }
    mx /= wsum;
    my /= wsum;
    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
    for (const auto& p : pts) {
        const Eigen::Vector2d d(p[0] - mx, p[1] - my);
        cov += p[2] * d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(cov);
    Eigen::Vector2d n = eig.eigenvectors().col(0);
    double rho = n.x() * mx + n.y() * my;
    if (rho < 0) {
        n = -n;
        rho = -rho;
    }
    double theta = std::atan2(n.y(), n.x()) / kDeg;
    if (theta < 0) {
        theta += 360;
    }
    return {rho, theta, line.score};
}

}  // namespace

Image gradient_magnitude(const Image& image)
{
    const Index rows = image.rows(), cols = image.cols();
    Image g(rows, cols);
    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) {
            const float gx = 0.5f * (image(r, std::min(c + 1, cols - 1)) - image(r, std::max<Index>(c - 1, 0)));
            const float gy = 0.5f * (image(std::min(r + 1, rows - 1), c) - image(std::max<Index>(r - 1, 0), c));
            g(r, c) = std::sqrt(gx * gx + gy * gy);
        }
    }
    return g;
}

Image edge_map(const Image& image, const HoughConfig& cfg)
{
    const Image g = gradient_magnitude(image);
    const float mx = g.maxCoeff();
    if (mx <= 0) {
        return Image::Zero(image.rows(), image.cols());
    }
    return (g / mx > static_cast<float>(cfg.edgeThreshold)).cast<float>();
}

Eigen::ArrayXXi hough_accumulator(const Image& edges)
{
    const int diag = static_cast<int>(std::ceil(std::hypot(edges.rows(), edges.cols())));
    Eigen::ArrayXXi acc = Eigen::ArrayXXi::Zero(180, 2 * diag + 1);
    std::array<double, 180> cs{}, sn{};
    for (int t = 0; t < 180; ++t) {
        cs[t] = std::cos(t * kDeg);
        sn[t] = std::sin(t * kDeg);
    }
    for (Index r = 0; r < edges.rows(); ++r) {
        for (Index c = 0; c < edges.cols(); ++c) {
            if (edges(r, c) == 0) {
                continue;
            }
            for (int t = 0; t < 180; ++t) {
                const auto bin = std::lround(static_cast<double>(c) * cs[t] + static_cast<double>(r) * sn[t]);
                ++acc(t, bin + diag);
            }
        }
    }
    return acc;
}

bool wedge_at_corner(const LineParams& line, Index rows, Index cols)
{
    if (!(line.thetaDeg > 0 && line.thetaDeg < 90) || line.rho <= 0) {
        return false;
    }
    const double xIntercept = line.rho / std::cos(line.thetaDeg * kDeg);
    const double yIntercept = line.rho / std::sin(line.thetaDeg * kDeg);
    return xIntercept <= static_cast<double>(cols) && yIntercept <= static_cast<double>(rows);
}

LineParams detect_pectoral_line(const Image& image, const HoughConfig& cfg)
{
    const Image grad = gradient_magnitude(image);
    const float mx = grad.maxCoeff();
    if (mx <= 0) {
        throw NoPectoralLine("detect_pectoral_line: image has no edges");
    }
    const Image edges = (grad / mx > static_cast<float>(cfg.edgeThreshold)).cast<float>();
    const Eigen::ArrayXXi acc = hough_accumulator(edges);
    const int diag = static_cast<int>((acc.cols() - 1) / 2);
    const int minVotes = static_cast<int>(std::ceil(cfg.minVotesFrac * static_cast<double>(image.rows())));

    LineParams best;
    best.score = -1;
    for (int t = 0; t < acc.rows(); ++t) {
        for (int b = 0; b < acc.cols(); ++b) {
            const int votes = acc(t, b);
            if (votes < minVotes || votes <= best.score) {
                continue;
            }
            const LineParams cand{static_cast<double>(b - diag), static_cast<double>(t), votes};
            if (wedge_at_corner(cand, image.rows(), image.cols())) {
                best = cand;
            }
        }
    }
    if (best.score < 0) {
        throw NoPectoralLine("detect_pectoral_line: no corner line reaches the vote threshold");
    }
    if (cfg.refine) {
        const LineParams polished = refine_line(best, grad, edges);
        if (wedge_at_corner(polished, image.rows(), image.cols())) {
            return polished;
        }
    }
    return best;
}

bool on_corner_side(const LineParams& line, Index row, Index col)
{
    const double v = static_cast<double>(col) * std::cos(line.thetaDeg * kDeg) +
                     static_cast<double>(row) * std::sin(line.thetaDeg * kDeg);
    return (v - line.rho) * (0.0 - line.rho) > 0;
}

Image remove_pectoral(const Image& image, const LineParams& line)
{
    Image out = image;
    for (Index r = 0; r < image.rows(); ++r) {
        for (Index c = 0; c < image.cols(); ++c) {
            if (on_corner_side(line, r, c)) {
                out(r, c) = 0;
            }
        }
    }
    return out;
}

std::pair<Point2, Point2> estimate_landmarks(const Image& image, float supportThreshold)
{
    Index first = -1, last = -1;
    for (Index r = 0; r < image.rows(); ++r) {
        if (image(r, 0) > supportThreshold) {
            first = first < 0 ? r : first;
            last = r;
        }
    }
    Index far = -1;
    for (Index c = image.cols() - 1; c >= 0 && far < 0; --c) {
        if ((image.col(c) > supportThreshold).any()) {
            far = c;
        }
    }
    if (first < 0 || far < 0) {
        throw DegenerateLandmarks("estimate_landmarks: no breast support on the chest-wall edge");
    }
    double rowSum = 0;
    int n = 0;
    for (Index r = 0; r < image.rows(); ++r) {
        if (image(r, far) > supportThreshold) {
            rowSum += static_cast<double>(r);
            ++n;
        }
    }
    return {{0.0, 0.5 * static_cast<double>(first + last)}, {static_cast<double>(far), rowSum / n}};
}

double ap_angle_deg(Point2 chest, Point2 nipple)
{
    return std::atan2(nipple.y - chest.y, nipple.x - chest.x) / kDeg;
}

Point2 align_point(Point2 p, double angleDeg, Index rows, Index cols)
{
    const Point2 c = centre(rows, cols);
    const double a = -angleDeg * kDeg;
    const double dx = p.x - c.x, dy = p.y - c.y;
    return {c.x + std::cos(a) * dx - std::sin(a) * dy, c.y + std::sin(a) * dx + std::cos(a) * dy};
}

Image align_ap(const Image& image, Point2 chest, Point2 nipple)
{
    if (std::hypot(nipple.x - chest.x, nipple.y - chest.y) < 1e-9) {
        throw DegenerateLandmarks("align_ap: chest and nipple landmarks coincide");
    }
    const double angle = ap_angle_deg(chest, nipple);
    if (angle == 0.0) {
        return image;
    }
    const Point2 c = centre(image.rows(), image.cols());
    const double a = angle * kDeg;
    Image out(image.rows(), image.cols());
    for (Index r = 0; r < image.rows(); ++r) {
        for (Index k = 0; k < image.cols(); ++k) {
            const double dx = static_cast<double>(k) - c.x, dy = static_cast<double>(r) - c.y;
            out(r, k) = bilinear_zero(image, c.x + std::cos(a) * dx - std::sin(a) * dy,
                                      c.y + std::sin(a) * dx + std::cos(a) * dy);
        }
    }
    return out;
}

void AffineRanges::validate() const
{
    if (rotationDeg < 0 || translate < 0 || shearDeg < 0 || scaleMin <= 0 || scaleMax < scaleMin) {
        throw std::invalid_argument("affine ranges must be non-negative with 0 < scaleMin <= scaleMax");
    }
}

Point2 affine_point(const AffineParams& a, Point2 p, Index rows, Index cols)
{
    const Point2 c = centre(rows, cols);
    const double cr = std::cos(a.rotationDeg * kDeg), sr = std::sin(a.rotationDeg * kDeg);
    const double sh = std::tan(a.shearDeg * kDeg);
    const double dx = a.scale * (p.x - c.x), dy = a.scale * (p.y - c.y);
    const double ux = dx + sh * dy, uy = dy;
    return {c.x + cr * ux - sr * uy + a.translate[0], c.y + sr * ux + cr * uy + a.translate[1]};
}

Image apply_affine(const Image& image, const AffineParams& a)
{
    const Point2 c = centre(image.rows(), image.cols());
    const double cr = std::cos(a.rotationDeg * kDeg), sr = std::sin(a.rotationDeg * kDeg);
    const double sh = std::tan(a.shearDeg * kDeg);
    Image out(image.rows(), image.cols());
    for (Index r = 0; r < image.rows(); ++r) {
        for (Index k = 0; k < image.cols(); ++k) {
            // Invert rotation, then shear, then scale.
            const double px = static_cast<double>(k) - c.x - a.translate[0];
            const double py = static_cast<double>(r) - c.y - a.translate[1];
            const double ux = cr * px + sr * py, uy = -sr * px + cr * py;
            const double dx = ux - sh * uy, dy = uy;
            out(r, k) = bilinear_zero(image, c.x + dx / a.scale, c.y + dy / a.scale);
        }
    }
    return out;
}

AffineParams sample_affine(std::mt19937_64& rng, const AffineRanges& ranges, Index rows, Index cols)
{
    ranges.validate();
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    AffineParams a;
    a.rotationDeg = ranges.rotationDeg * u(rng);
    a.translate[0] = ranges.translate * static_cast<double>(cols) / 128.0 * u(rng);
    a.translate[1] = ranges.translate * static_cast<double>(rows) / 128.0 * u(rng);
    a.scale = ranges.scaleMin + (ranges.scaleMax - ranges.scaleMin) * 0.5 * (u(rng) + 1.0);
    a.shearDeg = ranges.shearDeg * u(rng);
    return a;
}

std::pair<Image, AffineParams> random_affine(const Image& image, std::mt19937_64& rng, const AffineRanges& ranges)
{
    const AffineParams a = sample_affine(rng, ranges, image.rows(), image.cols());
    const bool identity = a.rotationDeg == 0 && a.translate[0] == 0 && a.translate[1] == 0 && a.scale == 1 &&
                          a.shearDeg == 0;
    return {identity ? image : apply_affine(image, a), a};
}

float bilinear_zero(const Image& image, double x, double y)
{
    const double fx = std::floor(x), fy = std::floor(y);
    const auto x0 = static_cast<Index>(fx), y0 = static_cast<Index>(fy);
    const double tx = x - fx, ty = y - fy;
    double acc = 0;
    for (int k = 0; k < 4; ++k) {
        const Index xi = x0 + (k & 1), yi = y0 + (k >> 1);
        if (xi < 0 || yi < 0 || xi >= image.cols() || yi >= image.rows()) {
            continue;
        }
        acc += ((k & 1) ? tx : 1 - tx) * ((k >> 1) ? ty : 1 - ty) * image(yi, xi);
    }
    return static_cast<float>(acc);
}

Image resize_bilinear(const Image& image, Index rows, Index cols)
{
    if (rows == image.rows() && cols == image.cols()) {
        return image;
    }
    const double sy = static_cast<double>(image.rows()) / static_cast<double>(rows);
    const double sx = static_cast<double>(image.cols()) / static_cast<double>(cols);
    const Index maxR = image.rows() - 1, maxC = image.cols() - 1;
    Image out(rows, cols);
    for (Index r = 0; r < rows; ++r) {
        const double y = std::clamp((static_cast<double>(r) + 0.5) * sy - 0.5, 0.0, static_cast<double>(maxR));
        const auto y0 = static_cast<Index>(std::floor(y));
        const Index y1 = std::min(y0 + 1, maxR);
        const double ty = y - static_cast<double>(y0);
        for (Index c = 0; c < cols; ++c) {
            const double x = std::clamp((static_cast<double>(c) + 0.5) * sx - 0.5, 0.0, static_cast<double>(maxC));
            const auto x0 = static_cast<Index>(std::floor(x));
            const Index x1 = std::min(x0 + 1, maxC);
            const double tx = x - static_cast<double>(x0);
            out(r, c) = static_cast<float>((1 - ty) * ((1 - tx) * image(y0, x0) + tx * image(y0, x1)) +
                                           ty * ((1 - tx) * image(y1, x0) + tx * image(y1, x1)));
        }
    }
    return out;
}

Image normalize_resize(const Image& image, Index rows, Index cols)
{
    Image out = resize_bilinear(image, rows, cols);
    const double mean = out.cast<double>().mean();
    const double var = (out.cast<double>() - mean).square().mean();
    const double sd = std::sqrt(std::max(var, 1e-6));
    return ((out.cast<double>() - mean) / sd).cast<float>();
}

ViewPairImages preprocess_pair(const Image& rawCC, const Image& rawMLO, Point2 chest, Point2 nipple,
                               const PreprocessConfig& cfg, std::mt19937_64* rng)
{
    Image mlo = rawMLO;
    try {
        mlo = remove_pectoral(mlo, detect_pectoral_line(mlo, cfg.hough));
    } catch (const NoPectoralLine&) {
    }
    mlo = align_ap(mlo, chest, nipple);
    Image cc = rawCC;
    if (rng != nullptr) {
        const AffineParams a = sample_affine(*rng, cfg.affine, cc.rows(), cc.cols());
        cc = apply_affine(cc, a);
        mlo = apply_affine(mlo, cfg.sharedAffine ? a : sample_affine(*rng, cfg.affine, mlo.rows(), mlo.cols()));
    }
    return {normalize_resize(cc, cfg.targetSize, cfg.targetSize), normalize_resize(mlo, cfg.targetSize, cfg.targetSize)};
}

}  // namespace glam
