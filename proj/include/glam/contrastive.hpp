#ifndef GLAM_CONTRASTIVE_HPP
#define GLAM_CONTRASTIVE_HPP

#include "glam/ops.hpp"

#include <cmath>
#include <memory>
#include <vector>

namespace glam {

inline constexpr double kNormFloor = 1e-8;

/// Cosine similarity with both norms floored at 1e-8, so a zero vector
/// yields 0 instead of NaN.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar cosine_sim(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b)
{
    using Scalar = typename DerivedA::Scalar;
    if (a.size() != b.size()) {
        throw ContractError("cosine_sim: length mismatch");
    }
    const Scalar na = std::max(a.norm(), Scalar(kNormFloor));
    const Scalar nb = std::max(b.norm(), Scalar(kNormFloor));
    return a.derived().reshaped().dot(b.derived().reshaped()) / (na * nb);
}

namespace detail {

template <typename Scalar>
void check_finite(const Matrix<Scalar>& m, const char* what)
{
    if (!m.allFinite()) {
        throw ContractError(std::string(what) + ": non-finite input");
    }
}

template <typename Scalar>
Matrix<Scalar> normalize_rows(const Matrix<Scalar>& x, RowVector<Scalar>& norms)
{
    norms = x.rowwise().norm().transpose().cwiseMax(Scalar(kNormFloor));
    Matrix<Scalar> out = x;
    for (Index r = 0; r < x.rows(); ++r) {
        out.row(r) /= norms(r);
    }
    return out;
}

/// Backward of row normalisation given d(out) and the normalised rows.
template <typename Scalar>
Matrix<Scalar> normalize_rows_backward(const Matrix<Scalar>& dn, const Matrix<Scalar>& n,
                                       const RowVector<Scalar>& norms)
{
    Matrix<Scalar> dx(dn.rows(), dn.cols());
    for (Index r = 0; r < dn.rows(); ++r) {
        if (norms(r) > Scalar(kNormFloor)) {
            dx.row(r) = (dn.row(r) - dn.row(r).dot(n.row(r)) * n.row(r)) / norms(r);
        } else {
            dx.row(r) = dn.row(r) / norms(r);
        }
    }
    return dx;
}

}  // namespace detail

/// InfoNCE between row-paired batches z and zTilde, temperature tau (1x1):
///   -1/B sum_i log softmax_j(cos(z_i, zTilde_j) / tau)_i
/// Asymmetric in its arguments.
template <typename Scalar>
Var<Scalar> info_nce(const Var<Scalar>& z, const Var<Scalar>& zTilde, const Var<Scalar>& tau)
{
    const Index batch = z.rows();
    if (batch < 1 || zTilde.rows() != batch || zTilde.cols() != z.cols()) {
        throw ContractError("info_nce: shape mismatch");
    }
    if (tau.rows() != 1 || tau.cols() != 1 || !(tau.item() > Scalar(0))) {
        throw ContractError("info_nce: tau must be a positive scalar");
    }
    detail::check_finite(z.value(), "info_nce");
    detail::check_finite(zTilde.value(), "info_nce");

    const Scalar t = tau.item();
    RowVector<Scalar> zNorm, ztNorm;
    Matrix<Scalar> zn = detail::normalize_rows(z.value(), zNorm);
    Matrix<Scalar> ztn = detail::normalize_rows(zTilde.value(), ztNorm);
    Matrix<Scalar> logits = (zn * ztn.transpose()) / t;
    Matrix<Scalar> probs = logits;
    Scalar loss = 0;
    for (Index i = 0; i < batch; ++i) {
        const Scalar mx = logits.row(i).maxCoeff();
        const Scalar lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
        loss += lse - logits(i, i);
        probs.row(i) = (logits.row(i).array() - lse).exp();
    }
    Matrix<Scalar> value(1, 1);
    value(0, 0) = loss / Scalar(batch);

    return z.graph()->record(
        std::move(value),
        [z, zTilde, tau, zn, ztn, zNorm, ztNorm, logits, probs, t](const Var<Scalar>& out) {
            const Index batch = probs.rows();
            Matrix<Scalar> dl = probs;
            dl.diagonal().array() -= Scalar(1);
            dl *= out.grad()(0, 0) / Scalar(batch);
            if (tau.requiresGrad()) {
                tau.grad()(0, 0) += -(dl.array() * logits.array()).sum() / t;
            }
            if (z.requiresGrad()) {
                Matrix<Scalar> dzn = (dl * ztn) / t;
                z.grad() += detail::normalize_rows_backward(dzn, zn, zNorm);
            }
            if (zTilde.requiresGrad()) {
                Matrix<Scalar> dztn = (dl.transpose() * zn) / t;
                zTilde.grad() += detail::normalize_rows_backward(dztn, ztn, ztNorm);
            }
        },
        z, zTilde, tau);
}

enum class View { CC = 0, MLO = 1 };

enum class NegativeSource { Position, Patient };

/// A negative candidate addressed by (sample in batch, super-patch position).
struct NegativeRef {
    int sample;
    int position;
    NegativeSource source;
};

/// Negatives for the query at `position` of `sample`: the other M-1 positions of
/// the same sample, then (when `patientNegatives`) the same position in the
/// other B-1 samples.
inline std::vector<NegativeRef> negative_refs(int batch, int m, int position, int sample, bool patientNegatives = true)
{
    if (batch < 1 || m < 1 || position < 0 || position >= m || sample < 0 || sample >= batch) {
        throw ContractError("negative_refs: index out of range");
    }
    std::vector<NegativeRef> refs;
    refs.reserve(static_cast<std::size_t>(m + batch - 2));
    for (int k = 0; k < m; ++k) {
        if (k != position) {
            refs.push_back({sample, k, NegativeSource::Position});
        }
    }
    if (patientNegatives) {
        for (int b = 0; b < batch; ++b) {
            if (b != sample) {
                refs.push_back({b, position, NegativeSource::Patient});
            }
        }
    }
    return refs;
}

template <typename Scalar>
struct NegativeSet {
    Matrix<Scalar> candidates;
    std::vector<NegativeSource> sourceTags;
    std::vector<NegativeRef> refs;
};

/// Materialises the negative set of query (i, j) of `sample` from one view's
/// batch of cross-view positives laid out as rows b*M + i*sqrt(M) + j.
template <typename Scalar>
NegativeSet<Scalar> build_negative_set(const Matrix<Scalar>& positives, int batch, int m, int i, int j, int sample)
{
    const int side = static_cast<int>(std::lround(std::sqrt(double(m))));
    if (side * side != m) {
        throw ConfigError("build_negative_set: M must be a perfect square");
    }
    if (positives.rows() != Index(batch) * m) {
        throw ContractError("build_negative_set: positives must have B*M rows");
    }
    if (i < 0 || j < 0 || i >= side || j >= side) {
        throw ContractError("build_negative_set: (i, j) outside grid");
    }
    NegativeSet<Scalar> set;
    set.refs = negative_refs(batch, m, i * side + j, sample);
    set.candidates.resize(static_cast<Index>(set.refs.size()), positives.cols());
    for (std::size_t r = 0; r < set.refs.size(); ++r) {
        set.candidates.row(static_cast<Index>(r)) = positives.row(Index(set.refs[r].sample) * m + set.refs[r].position);
        set.sourceTags.push_back(set.refs[r].source);
    }
    return set;
}

struct LocalLossOptions {
    bool patientNegatives = true;  ///< SPN toggle
    bool literalEq4 = false;       ///< exclude the positive from the denominator
};

/// Geometry-guided local contrastive loss.
///
/// `queries` and `positives` have 2*B*M rows ordered [view][sample][position]:
/// row (v*B + b)*M + k. Each query is scored against its own positive, the
/// positives at the other positions of the same sample and view, and (with
/// patient negatives) the positives at the same position of the other samples.
/// Averaged over all 2*B*M query terms. When `denominatorSizes` is given it
/// receives the number of exp-terms in each query's denominator.
template <typename Scalar>
Var<Scalar> local_nce(const Var<Scalar>& queries, const Var<Scalar>& positives, int batch, int m,
                      const Var<Scalar>& tau, LocalLossOptions options,
                      std::vector<int>* denominatorSizes = nullptr)
{
    const Index rows = Index(2) * batch * m;
    if (batch < 1 || m < 1 || queries.rows() != rows || positives.rows() != rows ||
        queries.cols() != positives.cols()) {
        throw ContractError("local_nce: expected 2*B*M rows in queries and positives");
    }
    if (tau.rows() != 1 || tau.cols() != 1 || !(tau.item() > Scalar(0))) {
        throw ContractError("local_nce: tau must be a positive scalar");
    }
    const bool spn = options.patientNegatives && batch > 1;
    if (options.literalEq4 && m == 1 && !spn) {
        throw ContractError("local_nce: literal form needs at least one negative");
    }
    detail::check_finite(queries.value(), "local_nce");
    detail::check_finite(positives.value(), "local_nce");

    const Scalar t = tau.item();
    RowVector<Scalar> qNorm, pNorm;
    Matrix<Scalar> qn = detail::normalize_rows(queries.value(), qNorm);
    Matrix<Scalar> pn = detail::normalize_rows(positives.value(), pNorm);

    auto row = [batch, m](int v, int b, int k) { return (Index(v) * batch + b) * m + k; };

    // d loss / d cos, per sample block (M x M) and per position block (B x B).
    std::vector<Matrix<Scalar>> dC(static_cast<std::size_t>(2 * batch));
    std::vector<Matrix<Scalar>> dD(static_cast<std::size_t>(2 * m));
    std::vector<Matrix<Scalar>> cosC(dC.size()), cosD(dD.size());
    for (int v = 0; v < 2; ++v) {
        for (int b = 0; b < batch; ++b) {
            const Index base = row(v, b, 0);
            cosC[v * batch + b] = qn.middleRows(base, m) * pn.middleRows(base, m).transpose();
            dC[v * batch + b].setZero(m, m);
        }
        for (int k = 0; k < m; ++k) {
            Matrix<Scalar> qk(batch, qn.cols()), pk(batch, pn.cols());
            for (int b = 0; b < batch; ++b) {
                qk.row(b) = qn.row(row(v, b, k));
                pk.row(b) = pn.row(row(v, b, k));
            }
            cosD[v * m + k] = qk * pk.transpose();
            dD[v * m + k].setZero(batch, batch);
        }
    }

    if (denominatorSizes) {
        denominatorSizes->clear();
    }
    const Scalar invR = Scalar(1) / Scalar(rows);
    Scalar loss = 0;
    Scalar dTau = 0;
    std::vector<Scalar> logits;
    for (int v = 0; v < 2; ++v) {
        for (int b = 0; b < batch; ++b) {
            const Matrix<Scalar>& C = cosC[v * batch + b];
            for (int k = 0; k < m; ++k) {
                // Entry 0 is the positive; then M-1 position and B-1 patient terms.
                logits.clear();
                logits.push_back(C(k, k) / t);
                for (int k2 = 0; k2 < m; ++k2) {
                    if (k2 != k) {
                        logits.push_back(C(k, k2) / t);
                    }
                }
                if (spn) {
                    for (int b2 = 0; b2 < batch; ++b2) {
                        if (b2 != b) {
                            logits.push_back(cosD[v * m + k](b, b2) / t);
                        }
                    }
                }
                const std::size_t first = options.literalEq4 ? 1 : 0;
                Scalar mx = logits[first];
                for (std::size_t e = first; e < logits.size(); ++e) {
                    mx = std::max(mx, logits[e]);
                }
                Scalar z = 0;
                for (std::size_t e = first; e < logits.size(); ++e) {
                    z += std::exp(logits[e] - mx);
                }
                const Scalar lse = mx + std::log(z);
                loss += lse - logits[0];
                if (denominatorSizes) {
                    denominatorSizes->push_back(static_cast<int>(logits.size() - first));
                }

                // Gradient wrt each logit, then wrt cosines (logit = cos / tau).
                std::size_t e = 0;
                auto grad = [&](std::size_t idx) {
                    Scalar g = idx >= first ? std::exp(logits[idx] - lse) : Scalar(0);
                    if (idx == 0) {
                        g -= Scalar(1);
                    }
                    g *= invR;
                    dTau -= g * logits[idx] / t;
                    return g / t;
                };
                Matrix<Scalar>& dc = dC[v * batch + b];
                dc(k, k) += grad(e++);
                for (int k2 = 0; k2 < m; ++k2) {
                    if (k2 != k) {
                        dc(k, k2) += grad(e++);
                    }
                }
                if (spn) {
                    for (int b2 = 0; b2 < batch; ++b2) {
                        if (b2 != b) {
                            dD[v * m + k](b, b2) += grad(e++);
                        }
                    }
                }
            }
        }
    }

    Matrix<Scalar> value(1, 1);
    value(0, 0) = loss * invR;
    return queries.graph()->record(
        std::move(value),
        [queries, positives, tau, batch, m, qn, pn, qNorm, pNorm, dC = std::move(dC), dD = std::move(dD), dTau,
         row](const Var<Scalar>& out) {
            const Scalar up = out.grad()(0, 0);
            if (tau.requiresGrad()) {
                tau.grad()(0, 0) += up * dTau;
            }
            if (!queries.requiresGrad() && !positives.requiresGrad()) {
                return;
            }
            Matrix<Scalar> dqn = Matrix<Scalar>::Zero(qn.rows(), qn.cols());
            Matrix<Scalar> dpn = Matrix<Scalar>::Zero(pn.rows(), pn.cols());
            for (int v = 0; v < 2; ++v) {
                for (int b = 0; b < batch; ++b) {
                    const Index base = row(v, b, 0);
                    const Matrix<Scalar>& g = dC[v * batch + b];
                    dqn.middleRows(base, m).noalias() += g * pn.middleRows(base, m);
                    dpn.middleRows(base, m).noalias() += g.transpose() * qn.middleRows(base, m);
                }
                for (int k = 0; k < m; ++k) {
                    const Matrix<Scalar>& g = dD[v * m + k];
                    if (g.size() == 0 || g.isZero(0)) {
                        continue;
                    }
                    for (int b = 0; b < batch; ++b) {
                        for (int b2 = 0; b2 < batch; ++b2) {
                            if (g(b, b2) != Scalar(0)) {
                                dqn.row(row(v, b, k)) += g(b, b2) * pn.row(row(v, b2, k));
                                dpn.row(row(v, b2, k)) += g(b, b2) * qn.row(row(v, b, k));
                            }
                        }
                    }
                }
            }
            if (queries.requiresGrad()) {
                queries.grad() += up * detail::normalize_rows_backward(dqn, qn, qNorm);
            }
            if (positives.requiresGrad()) {
                positives.grad() += up * detail::normalize_rows_backward(dpn, pn, pNorm);
            }
        },
        queries, positives, tau);
}

}  // namespace glam

#endif  // GLAM_CONTRASTIVE_HPP
