// Explicit-loop reference implementations used as test oracles.
#ifndef GLAM_TESTS_ORACLES_HPP
#define GLAM_TESTS_ORACLES_HPP

#include <Eigen/Dense>

#include <cmath>
#include <vector>

namespace oracle {

using Mat = Eigen::MatrixXd;

inline double cosine(const Mat& a, Eigen::Index i, const Mat& b, Eigen::Index j)
{
    double dot = 0, na = 0, nb = 0;
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
        dot += a(i, c) * b(j, c);
        na += a(i, c) * a(i, c);
        nb += b(j, c) * b(j, c);
    }
    return dot / (std::max(std::sqrt(na), 1e-8) * std::max(std::sqrt(nb), 1e-8));
}

inline double info_nce(const Mat& z, const Mat& zt, double tau)
{
    const Eigen::Index b = z.rows();
    double loss = 0;
    for (Eigen::Index i = 0; i < b; ++i) {
        double denom = 0;
        for (Eigen::Index j = 0; j < b; ++j) {
            denom += std::exp(cosine(z, i, zt, j) / tau);
        }
        loss -= std::log(std::exp(cosine(z, i, zt, i) / tau) / denom);
    }
    return loss / double(b);
}

inline double global_loss(const Mat& vcc, const Mat& vmlo, const Mat& t, double tau)
{
    return info_nce(vcc, vmlo, tau) +
           0.5 * (info_nce(vcc, t, tau) + info_nce(t, vcc, tau) + info_nce(vmlo, t, tau) + info_nce(t, vmlo, tau));
}

/// Local loss with every negative materialised. Rows of q and p are
/// (v * B + b) * M + k.
inline double local_loss(const Mat& q, const Mat& p, int batch, int m, double tau, bool spn, bool literal)
{
    auto row = [batch, m](int v, int b, int k) { return Eigen::Index((v * batch + b) * m + k); };
    double total = 0;
    int terms = 0;
    for (int v = 0; v < 2; ++v) {
        for (int b = 0; b < batch; ++b) {
            for (int k = 0; k < m; ++k) {
                const Eigen::Index qi = row(v, b, k);
                std::vector<Eigen::Index> negatives;
                for (int k2 = 0; k2 < m; ++k2) {
                    if (k2 != k) {
                        negatives.push_back(row(v, b, k2));
                    }
                }
                if (spn) {
                    for (int b2 = 0; b2 < batch; ++b2) {
                        if (b2 != b) {
                            negatives.push_back(row(v, b2, k));
                        }
                    }
                }
                const double pos = std::exp(cosine(q, qi, p, qi) / tau);
                double denom = literal ? 0.0 : pos;
                for (Eigen::Index n : negatives) {
                    denom += std::exp(cosine(q, qi, p, n) / tau);
                }
                total -= std::log(pos / denom);
                ++terms;
            }
        }
    }
    return total / terms;
}

/// AUC by enumerating every positive/negative pair; ties count one half.
inline double pair_auc(const std::vector<double>& scores, const std::vector<bool>& positive)
{
    long long twice = 0, pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (positive[i] && !positive[j]) {
                ++pairs;
                twice += scores[i] > scores[j] ? 2 : scores[i] == scores[j] ? 1 : 0;
            }
        }
    }
    return 100.0 * double(twice) / double(2 * pairs);
}

/// Mean per-class recall of argmax predictions over classes present, percent.
inline double balanced_accuracy(const Mat& probs, const std::vector<int>& labels)
{
    std::vector<int> total(std::size_t(probs.cols()), 0), correct(std::size_t(probs.cols()), 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        int best = 0;
        for (int c = 1; c < probs.cols(); ++c) {
            if (probs(Eigen::Index(i), c) > probs(Eigen::Index(i), best)) {
                best = c;
            }
        }
        ++total[std::size_t(labels[i])];
        correct[std::size_t(labels[i])] += best == labels[i];
    }
    double sum = 0;
    int present = 0;
    for (std::size_t c = 0; c < total.size(); ++c) {
        if (total[c] > 0) {
            sum += double(correct[c]) / double(total[c]);
            ++present;
        }
    }
    return 100.0 * sum / present;
}

/// One-vs-rest AUC averaged over classes present, percent.
inline double macro_auc(const Mat& probs, const std::vector<int>& labels)
{
    double sum = 0;
    int present = 0;
    for (int c = 0; c < probs.cols(); ++c) {
        std::vector<double> scores;
        std::vector<bool> pos;
        bool any = false;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            scores.push_back(probs(Eigen::Index(i), c));
            pos.push_back(labels[i] == c);
            any = any || labels[i] == c;
        }
        if (any) {
            sum += pair_auc(scores, pos);
            ++present;
        }
    }
    return sum / present;
}

/// Bilinear interpolation at (x, y) by the four-neighbour formula, clamped.
inline double bilinear(const Eigen::ArrayXXf& img, double x, double y)
{
    const auto clampi = [](long v, long hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
    const long x0 = long(std::floor(x)), y0 = long(std::floor(y));
    const double fx = x - double(x0), fy = y - double(y0);
    const long c = img.cols() - 1, r = img.rows() - 1;
    const double a = img(clampi(y0, r), clampi(x0, c));
    const double b = img(clampi(y0, r), clampi(x0 + 1, c));
    const double d = img(clampi(y0 + 1, r), clampi(x0, c));
    const double e = img(clampi(y0 + 1, r), clampi(x0 + 1, c));
    return (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * d + fx * e);
}

}  // namespace oracle

#endif  // GLAM_TESTS_ORACLES_HPP
