// Random small instances comparing compute_metrics against the oracles.
#ifndef GLAM_TESTS_METRIC_CHECK_HPP
#define GLAM_TESTS_METRIC_CHECK_HPP

#include "oracles.hpp"

#include "glam/evaluation.hpp"

#include <random>

namespace metric_check {

struct Result {
    int instances = 0;
    int mismatches = 0;
};

/// Scores are drawn on a coarse grid half the time so ties are common.
inline Result run(int instances, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    Result res;
    while (res.instances < instances) {
        const int classes = 2 + int(rng() % 3);
        const int n = 2 + int(rng() % 30);
        const bool coarse = rng() % 2 == 0;
        std::vector<int> labels(static_cast<std::size_t>(n));
        for (auto& l : labels) {
            l = int(rng() % std::uint64_t(classes));
        }
        if (std::count(labels.begin(), labels.end(), labels[0]) == n) {
            continue;
        }
        std::uniform_real_distribution<double> u(0.0, 1.0);
        glam::Matrix<double> probs(n, classes);
        for (int i = 0; i < n; ++i) {
            for (int c = 0; c < classes; ++c) {
                probs(i, c) = coarse ? std::floor(u(rng) * 4) : u(rng);
            }
            probs.row(i) /= std::max(probs.row(i).sum(), 1e-12);
        }
        const glam::Metrics m = glam::compute_metrics(probs, labels);
        const Eigen::MatrixXd pd = probs;
        ++res.instances;
        res.mismatches += m.bACC != oracle::balanced_accuracy(pd, labels) || m.AUC != oracle::macro_auc(pd, labels);
    }
    return res;
}

}  // namespace metric_check

#endif  // GLAM_TESTS_METRIC_CHECK_HPP
