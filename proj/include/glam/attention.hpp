#ifndef GLAM_ATTENTION_HPP
#define GLAM_ATTENTION_HPP

#include "glam/ops.hpp"

#include <cmath>
#include <memory>
#include <vector>

namespace glam {

/// Multi-head self-attention over contiguous row groups.
///
/// `qkv` holds [Q | K | V] column blocks of width d each. Rows
/// offsets[g] .. offsets[g+1]-1 form one sequence; attention never crosses
/// sequences. Returns the concatenated head outputs, shape (N, d).
template <typename Scalar>
Var<Scalar> self_attention(const Var<Scalar>& qkv, std::vector<int> offsets, int heads)
{
    const Index n = qkv.rows();
    if (qkv.cols() % 3 != 0) {
        throw ContractError("self_attention: qkv width must be 3*d");
    }
    const Index d = qkv.cols() / 3;
    if (heads <= 0 || d % heads != 0) {
        throw ContractError("self_attention: dim not divisible by heads");
    }
    if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != n) {
        throw ContractError("self_attention: offsets must span all rows");
    }
    const Index dh = d / heads;
    const Scalar scale = Scalar(1) / std::sqrt(Scalar(dh));
    const auto groups = offsets.size() - 1;

    auto probs = std::make_shared<std::vector<Matrix<Scalar>>>(groups * heads);
    Matrix<Scalar> value(n, d);
    const Matrix<Scalar>& x = qkv.value();
    for (std::size_t g = 0; g < groups; ++g) {
        const Index start = offsets[g];
        const Index len = offsets[g + 1] - offsets[g];
        for (int h = 0; h < heads; ++h) {
            const Matrix<Scalar> q = x.block(start, h * dh, len, dh) * scale;
            const Matrix<Scalar> k = x.block(start, d + h * dh, len, dh);
            const Matrix<Scalar> v = x.block(start, 2 * d + h * dh, len, dh);
            Matrix<Scalar> p(len, len);
            p.noalias() = q * k.transpose();
            softmax_rows_inplace(p);
            Matrix<Scalar> o(len, dh);
            o.noalias() = p * v;
            value.block(start, h * dh, len, dh) = o;
            (*probs)[g * heads + h] = std::move(p);
        }
    }
    return qkv.graph()->record(
        std::move(value),
        [qkv, offsets = std::move(offsets), heads, d, dh, scale, probs](const Var<Scalar>& out) {
            if (!qkv.requiresGrad()) {
                return;
            }
            const Matrix<Scalar>& x = qkv.value();
            const Matrix<Scalar>& dout = out.grad();
            Matrix<Scalar>& gx = qkv.grad();
            for (std::size_t g = 0; g + 1 < offsets.size(); ++g) {
                const Index start = offsets[g];
                const Index len = offsets[g + 1] - offsets[g];
                for (int h = 0; h < heads; ++h) {
                    const Matrix<Scalar>& p = (*probs)[g * heads + h];
                    const Matrix<Scalar> q = x.block(start, h * dh, len, dh);
                    const Matrix<Scalar> k = x.block(start, d + h * dh, len, dh);
                    const Matrix<Scalar> v = x.block(start, 2 * d + h * dh, len, dh);
                    const Matrix<Scalar> dO = dout.block(start, h * dh, len, dh);
                    Matrix<Scalar> dv(len, dh), dq(len, dh), dk(len, dh);
                    dv.noalias() = p.transpose() * dO;
                    Matrix<Scalar> ds(len, len);
                    ds.noalias() = dO * v.transpose();
                    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dots = (ds.array() * p.array()).rowwise().sum();
                    ds = (p.array() * (ds.array().colwise() - dots.array())).matrix() * scale;
                    dq.noalias() = ds * k;
                    dk.noalias() = ds.transpose() * q;
                    gx.block(start, h * dh, len, dh) += dq;
                    gx.block(start, d + h * dh, len, dh) += dk;
                    gx.block(start, 2 * d + h * dh, len, dh) += dv;
                }
            }
        },
        qkv);
}

/// Single-query attention pooling per row group.
///
/// For group g: w = softmax(keys[rows] * query^T * scale) and
/// out.row(g) = sum_k w_k values[k]. Groups are arbitrary index sets.
template <typename Scalar>
Var<Scalar> attention_pool(const Var<Scalar>& keys, const Var<Scalar>& query, const Var<Scalar>& values,
                           std::vector<std::vector<int>> groups, Scalar scale)
{
    const Index d = keys.cols();
    if (query.rows() != 1 || query.cols() != d || values.rows() != keys.rows()) {
        throw ContractError("attention_pool: shape mismatch");
    }
    auto weights = std::make_shared<std::vector<RowVector<Scalar>>>(groups.size());
    Matrix<Scalar> value = Matrix<Scalar>::Zero(static_cast<Index>(groups.size()), values.cols());
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const auto& idx = groups[g];
        if (idx.empty()) {
            throw ContractError("attention_pool: empty group");
        }
        RowVector<Scalar> w(static_cast<Index>(idx.size()));
        for (std::size_t k = 0; k < idx.size(); ++k) {
            w(static_cast<Index>(k)) = keys.value().row(idx[k]).dot(query.value().row(0)) * scale;
        }
        softmax_inplace(w);
        for (std::size_t k = 0; k < idx.size(); ++k) {
            value.row(static_cast<Index>(g)) += w(static_cast<Index>(k)) * values.value().row(idx[k]);
        }
        (*weights)[g] = std::move(w);
    }
    return keys.graph()->record(
        std::move(value),
        [keys, query, values, groups = std::move(groups), weights, scale](const Var<Scalar>& out) {
            const Matrix<Scalar>& dout = out.grad();
            for (std::size_t g = 0; g < groups.size(); ++g) {
                const auto& idx = groups[g];
                const RowVector<Scalar>& w = (*weights)[g];
                const auto dg = dout.row(static_cast<Index>(g));
                RowVector<Scalar> dw(w.size());
                for (std::size_t k = 0; k < idx.size(); ++k) {
                    const auto kk = static_cast<Index>(k);
                    if (values.requiresGrad()) {
                        values.grad().row(idx[k]) += w(kk) * dg;
                    }
                    dw(kk) = dg.dot(values.value().row(idx[k]));
                }
                const Scalar mean = dw.dot(w);
                for (std::size_t k = 0; k < idx.size(); ++k) {
                    const auto kk = static_cast<Index>(k);
                    const Scalar ds = w(kk) * (dw(kk) - mean) * scale;
                    if (keys.requiresGrad()) {
                        keys.grad().row(idx[k]) += ds * query.value().row(0);
                    }
                    if (query.requiresGrad()) {
                        query.grad().row(0) += ds * keys.value().row(idx[k]);
                    }
                }
            }
        },
        keys, query, values);
}

/// Plain mean of each row group.
template <typename Scalar>
Var<Scalar> group_mean(const Var<Scalar>& x, std::vector<std::vector<int>> groups)
{
    Matrix<Scalar> value = Matrix<Scalar>::Zero(static_cast<Index>(groups.size()), x.cols());
    for (std::size_t g = 0; g < groups.size(); ++g) {
        if (groups[g].empty()) {
            throw ContractError("group_mean: empty group");
        }
        for (int r : groups[g]) {
            value.row(static_cast<Index>(g)) += x.value().row(r);
        }
        value.row(static_cast<Index>(g)) /= Scalar(groups[g].size());
    }
    return x.graph()->record(
        std::move(value),
        [x, groups = std::move(groups)](const Var<Scalar>& out) {
            if (!x.requiresGrad()) {
                return;
            }
            for (std::size_t g = 0; g < groups.size(); ++g) {
                const Scalar inv = Scalar(1) / Scalar(groups[g].size());
                for (int r : groups[g]) {
                    x.grad().row(r) += inv * out.grad().row(static_cast<Index>(g));
                }
            }
        },
        x);
}

/// Queries that share one key set (e.g. every query of column j attending
/// to the AP slice j of the other view).
struct AttentionGroup {
    std::vector<int> queries;
    std::vector<int> keys;
};

/// Attention probabilities recorded by cross_attention, one (|queries|, |keys|)
/// matrix per group and head, laid out [group * heads + head].
template <typename Scalar>
struct AttentionWeights {
    std::vector<Matrix<Scalar>> probs;
    int heads = 0;
};

/// Multi-head cross-attention with per-group key sets.
///
/// Inputs are already projected: q (Nq, d), k and v (Nk, d). Scores per head
/// are cos(q_h, k_h) / sqrt(d_h) when `cosine` is set, else q_h . k_h / sqrt(d_h).
/// Returns concatenated head outputs (Nq, d); every query must belong to exactly
/// one group.
template <typename Scalar>
Var<Scalar> cross_attention(const Var<Scalar>& q, const Var<Scalar>& k, const Var<Scalar>& v,
                            std::vector<AttentionGroup> groups, int heads, bool cosine,
                            std::shared_ptr<AttentionWeights<Scalar>> record = nullptr)
{
    const Index d = q.cols();
    if (k.cols() != d || v.cols() != d || k.rows() != v.rows()) {
        throw ContractError("cross_attention: dimension mismatch between query and slice");
    }
    if (heads <= 0 || d % heads != 0) {
        throw ContractError("cross_attention: dim not divisible by heads");
    }
    const Index dh = d / heads;
    const Scalar scale = Scalar(1) / std::sqrt(Scalar(dh));
    static constexpr Scalar kNormFloor = Scalar(1e-8);

    if (!record) {
        record = std::make_shared<AttentionWeights<Scalar>>();
    }
    record->heads = heads;
    record->probs.assign(groups.size() * heads, Matrix<Scalar>());

    auto gatherBlock = [](const Matrix<Scalar>& src, const std::vector<int>& rows, Index col, Index width) {
        Matrix<Scalar> out(static_cast<Index>(rows.size()), width);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            out.row(static_cast<Index>(r)) = src.block(rows[r], col, 1, width);
        }
        return out;
    };

    Matrix<Scalar> value = Matrix<Scalar>::Zero(q.rows(), d);
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const auto& grp = groups[g];
        if (grp.keys.empty()) {
            throw ContractError("cross_attention: empty key set");
        }
        for (int h = 0; h < heads; ++h) {
            Matrix<Scalar> qh = gatherBlock(q.value(), grp.queries, h * dh, dh);
            Matrix<Scalar> kh = gatherBlock(k.value(), grp.keys, h * dh, dh);
            Matrix<Scalar> vh = gatherBlock(v.value(), grp.keys, h * dh, dh);
            if (cosine) {
                for (Index r = 0; r < qh.rows(); ++r) {
                    qh.row(r) /= std::max(qh.row(r).norm(), kNormFloor);
                }
                for (Index r = 0; r < kh.rows(); ++r) {
                    kh.row(r) /= std::max(kh.row(r).norm(), kNormFloor);
                }
            }
            Matrix<Scalar> p = (qh * kh.transpose()) * scale;
            for (Index r = 0; r < p.rows(); ++r) {
                auto row = p.row(r);
                softmax_inplace(row);
            }
            Matrix<Scalar> o = p * vh;
            for (std::size_t r = 0; r < grp.queries.size(); ++r) {
                value.block(grp.queries[r], h * dh, 1, dh) = o.row(static_cast<Index>(r));
            }
            record->probs[g * heads + h] = std::move(p);
        }
    }

    return q.graph()->record(
        std::move(value),
        [q, k, v, groups = std::move(groups), heads, cosine, dh, scale, record, gatherBlock](const Var<Scalar>& out) {
            const Matrix<Scalar>& dout = out.grad();
            for (std::size_t g = 0; g < groups.size(); ++g) {
                const auto& grp = groups[g];
                for (int h = 0; h < heads; ++h) {
                    const Matrix<Scalar>& p = record->probs[g * heads + h];
                    const Index col = h * dh;
                    Matrix<Scalar> qh = gatherBlock(q.value(), grp.queries, col, dh);
                    Matrix<Scalar> kh = gatherBlock(k.value(), grp.keys, col, dh);
                    Matrix<Scalar> vh = gatherBlock(v.value(), grp.keys, col, dh);
                    Matrix<Scalar> dO = gatherBlock(dout, grp.queries, col, dh);

                    if (v.requiresGrad()) {
                        Matrix<Scalar> dv = p.transpose() * dO;
                        for (std::size_t r = 0; r < grp.keys.size(); ++r) {
                            v.grad().block(grp.keys[r], col, 1, dh) += dv.row(static_cast<Index>(r));
                        }
                    }
                    if (!q.requiresGrad() && !k.requiresGrad()) {
                        continue;
                    }
                    Matrix<Scalar> dp = dO * vh.transpose();
                    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dots = (dp.array() * p.array()).rowwise().sum();
                    Matrix<Scalar> ds = (p.array() * (dp.array().colwise() - dots.array())).matrix() * scale;

                    RowVector<Scalar> qNorm, kNorm;
                    if (cosine) {
                        qNorm = qh.rowwise().norm().transpose().cwiseMax(kNormFloor);
                        kNorm = kh.rowwise().norm().transpose().cwiseMax(kNormFloor);
                        for (Index r = 0; r < qh.rows(); ++r) {
                            qh.row(r) /= qNorm(r);
                        }
                        for (Index r = 0; r < kh.rows(); ++r) {
                            kh.row(r) /= kNorm(r);
                        }
                    }
                    Matrix<Scalar> dq = ds * kh;
                    Matrix<Scalar> dk = ds.transpose() * qh;
                    if (cosine) {
                        // d(u/|u|) = (du - uhat (uhat . du)) / |u|; zero past the floor.
                        for (Index r = 0; r < dq.rows(); ++r) {
                            const Scalar proj = dq.row(r).dot(qh.row(r));
                            dq.row(r) = qNorm(r) > kNormFloor ? ((dq.row(r) - proj * qh.row(r)) / qNorm(r)).eval()
                                                              : (dq.row(r) / qNorm(r)).eval();
                        }
                        for (Index r = 0; r < dk.rows(); ++r) {
                            const Scalar proj = dk.row(r).dot(kh.row(r));
                            dk.row(r) = kNorm(r) > kNormFloor ? ((dk.row(r) - proj * kh.row(r)) / kNorm(r)).eval()
                                                              : (dk.row(r) / kNorm(r)).eval();
                        }
                    }
                    if (q.requiresGrad()) {
                        for (std::size_t r = 0; r < grp.queries.size(); ++r) {
                            q.grad().block(grp.queries[r], col, 1, dh) += dq.row(static_cast<Index>(r));
                        }
                    }
                    if (k.requiresGrad()) {
                        for (std::size_t r = 0; r < grp.keys.size(); ++r) {
                            k.grad().block(grp.keys[r], col, 1, dh) += dk.row(static_cast<Index>(r));
                        }
                    }
                }
            }
        },
        q, k, v);
}

}  // namespace glam

#endif  // GLAM_ATTENTION_HPP
