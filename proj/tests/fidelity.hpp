// Pectoral-removal IoU and AP-column agreement over synthetic MLO images.
#ifndef GLAM_TESTS_FIDELITY_HPP
#define GLAM_TESTS_FIDELITY_HPP

#include "glam/phantom.hpp"
#include "glam/preprocess.hpp"

#include <random>

namespace fidelity {

struct Result {
    int images = 0;
    int noLine = 0;
    double minIoU = 1;
    double meanIoU = 0;
    int rois = 0;
    int roisAgree = 0;
};

inline double iou(const glam::Mask& truth, const glam::LineParams& line)
{
    long inter = 0, uni = 0;
    for (Eigen::Index r = 0; r < truth.rows(); ++r) {
        for (Eigen::Index c = 0; c < truth.cols(); ++c) {
            const bool a = truth(r, c) != 0, b = glam::on_corner_side(line, r, c);
            inter += a && b;
            uni += a || b;
        }
    }
    return uni ? double(inter) / double(uni) : 1.0;
}

/// Each MLO view is tilted by a random angle in [-15, 15] degrees about the
/// image centre before alignment; landmarks and ROI centres follow the same
/// map. An ROI agrees when its aligned column is within radius + 2 of the CC
/// column.
inline Result run(int count, std::uint64_t seed = 2024)
{
    Result res;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> tilt(-15.0, 15.0);
    glam::PhantomConfig pc;
    pc.roiCountMin = 1;
    pc.roiCountMax = 2;
    pc.mloAngleMin = 40;
    pc.mloAngleMax = 50;
    std::uniform_real_distribution<double> angle(pc.mloAngleMin, pc.mloAngleMax);
    double iouSum = 0;
    for (int i = 0; i < count; ++i) {
        const glam::Phantom p = glam::generate_phantom(seed * 7919 + std::uint64_t(i), pc);
        const glam::RawViewPair pair = glam::project_pair(p, angle(rng));
        ++res.images;
        try {
            const double v = iou(pair.pectoralMask, glam::detect_pectoral_line(pair.imageMLO));
            iouSum += v;
            res.minIoU = std::min(res.minIoU, v);
        } catch (const glam::NoPectoralLine&) {
            ++res.noLine;
            res.minIoU = 0;
        }

        const auto rows = pair.imageMLO.rows(), cols = pair.imageMLO.cols();
        glam::AffineParams a;
        a.rotationDeg = tilt(rng);
        auto move = [&](glam::Point2 q) { return glam::affine_point(a, q, rows, cols); };
        const glam::Point2 chest = move({pair.chestPoint[0], pair.chestPoint[1]});
        const glam::Point2 nipple = move({pair.nipplePoint[0], pair.nipplePoint[1]});
        const double ap = glam::ap_angle_deg(chest, nipple);
        for (const auto& gt : pair.groundTruth) {
            const glam::Point2 tilted = move({double(gt.mloColumn), double(gt.mloRow)});
            const glam::Point2 aligned = glam::align_point(tilted, ap, rows, cols);
            ++res.rois;
            res.roisAgree += std::abs(aligned.x - gt.ccColumn) <= gt.radius + 2;
        }
    }
    res.meanIoU = res.images ? iouSum / res.images : 0;
    return res;
}

}  // namespace fidelity

#endif  // GLAM_TESTS_FIDELITY_HPP
