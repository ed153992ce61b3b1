#ifndef GLAM_OPS_HPP
#define GLAM_OPS_HPP

#include "glam/tensor.hpp"

#include <cmath>
#include <span>
#include <vector>

namespace glam {

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b)
{
    if (a.cols() != b.rows()) {
        throw ContractError("matmul: inner dimensions differ");
    }
    Matrix<Scalar> value = a.value() * b.value();
    return a.graph()->record(
        std::move(value),
        [a, b](const Var<Scalar>& out) {
            accumulate(a, out.grad() * b.value().transpose());
            accumulate(b, a.value().transpose() * out.grad());
        },
        a, b);
}

/// Elementwise sum. A single-row `b` is broadcast over the rows of `a`.
template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b)
{
    if (a.cols() != b.cols() || (a.rows() != b.rows() && b.rows() != 1)) {
        throw ContractError("add: shape mismatch");
    }
    const bool broadcast = a.rows() != b.rows();
    Matrix<Scalar> value = a.value();
    if (broadcast) {
        value.rowwise() += b.value().row(0);
    } else {
        value += b.value();
    }
    return a.graph()->record(
        std::move(value),
        [a, b, broadcast](const Var<Scalar>& out) {
            accumulate(a, out.grad());
            if (broadcast) {
                accumulate(b, out.grad().colwise().sum());
            } else {
                accumulate(b, out.grad());
            }
        },
        a, b);
}

template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b)
{
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ContractError("sub: shape mismatch");
    }
    Matrix<Scalar> value = a.value() - b.value();
    return a.graph()->record(
        std::move(value),
        [a, b](const Var<Scalar>& out) {
            accumulate(a, out.grad());
            accumulate(b, -out.grad());
        },
        a, b);
}

template <typename Scalar>
Var<Scalar> operator*(const Var<Scalar>& a, Scalar s)
{
    Matrix<Scalar> value = a.value() * s;
    return a.graph()->record(
        std::move(value), [a, s](const Var<Scalar>& out) { accumulate(a, out.grad() * s); }, a);
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a)
{
    Matrix<Scalar> value(1, 1);
    value(0, 0) = a.value().sum();
    return a.graph()->record(
        std::move(value),
        [a](const Var<Scalar>& out) {
            if (a.requiresGrad()) {
                a.grad().array() += out.grad()(0, 0);
            }
        },
        a);
}

/// tanh approximation of GELU.
template <typename Scalar>
Var<Scalar> gelu(const Var<Scalar>& x)
{
    static constexpr Scalar kC = Scalar(0.7978845608028654);
    static constexpr Scalar kA = Scalar(0.044715);
    const auto xv = x.value().array();
    Matrix<Scalar> t = (kC * (xv + kA * xv.cube())).tanh().matrix();
    Matrix<Scalar> value = (Scalar(0.5) * xv * (Scalar(1) + t.array())).matrix();
    return x.graph()->record(
        std::move(value),
        [x, t](const Var<Scalar>& out) {
            if (!x.requiresGrad()) {
                return;
            }
            const auto xv = x.value().array();
            const auto ta = t.array();
            auto d = Scalar(0.5) * (Scalar(1) + ta) +
                     Scalar(0.5) * xv * (Scalar(1) - ta.square()) * kC * (Scalar(1) + Scalar(3) * kA * xv.square());
            x.grad().array() += out.grad().array() * d;
        },
        x);
}

template <typename Scalar>
Var<Scalar> softplus(const Var<Scalar>& x)
{
    Matrix<Scalar> value = x.value().unaryExpr([](Scalar v) {
        return v > Scalar(20) ? v : std::log1p(std::exp(v));
    });
    return x.graph()->record(
        std::move(value),
        [x](const Var<Scalar>& out) {
            if (x.requiresGrad()) {
                auto sig = x.value().unaryExpr([](Scalar v) { return Scalar(1) / (Scalar(1) + std::exp(-v)); });
                x.grad().array() += out.grad().array() * sig.array();
            }
        },
        x);
}

/// Row-wise layer normalisation with affine parameters of shape (1, d).
template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                       Scalar eps = Scalar(1e-5))
{
    const Index n = x.rows();
    const Index d = x.cols();
    if (gamma.cols() != d || beta.cols() != d || gamma.rows() != 1 || beta.rows() != 1) {
        throw ContractError("layer_norm: parameter shape mismatch");
    }
    Matrix<Scalar> xhat(n, d);
    RowVector<Scalar> invStd(n);
    for (Index r = 0; r < n; ++r) {
        const Scalar mean = x.value().row(r).mean();
        const Scalar var = (x.value().row(r).array() - mean).square().mean();
        invStd(r) = Scalar(1) / std::sqrt(var + eps);
        xhat.row(r) = (x.value().row(r).array() - mean) * invStd(r);
    }
    Matrix<Scalar> value = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
    value.rowwise() += beta.value().row(0);
    return x.graph()->record(
        std::move(value),
        [x, gamma, beta, xhat, invStd](const Var<Scalar>& out) {
            const Matrix<Scalar>& dy = out.grad();
            accumulate(gamma, (dy.array() * xhat.array()).colwise().sum().matrix());
            accumulate(beta, dy.colwise().sum());
            if (!x.requiresGrad()) {
                return;
            }
            const Index d = xhat.cols();
            Matrix<Scalar> dxhat = (dy.array().rowwise() * gamma.value().row(0).array()).matrix();
            for (Index r = 0; r < xhat.rows(); ++r) {
                const Scalar m1 = dxhat.row(r).sum() / Scalar(d);
                const Scalar m2 = dxhat.row(r).dot(xhat.row(r)) / Scalar(d);
                x.grad().row(r).array() +=
                    invStd(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
            }
        },
        x, gamma, beta);
}

/// Row gather: out.row(r) = x.row(index[r]). Backward scatter-adds.
template <typename Scalar>
Var<Scalar> gather_rows(const Var<Scalar>& x, std::vector<int> index)
{
    Matrix<Scalar> value(static_cast<Index>(index.size()), x.cols());
    for (std::size_t r = 0; r < index.size(); ++r) {
        if (index[r] < 0 || index[r] >= x.rows()) {
            throw ContractError("gather_rows: index out of range");
        }
        value.row(static_cast<Index>(r)) = x.value().row(index[r]);
    }
    return x.graph()->record(
        std::move(value),
        [x, index = std::move(index)](const Var<Scalar>& out) {
            if (!x.requiresGrad()) {
                return;
            }
            Matrix<Scalar>& g = x.grad();
            for (std::size_t r = 0; r < index.size(); ++r) {
                g.row(index[r]) += out.grad().row(static_cast<Index>(r));
            }
        },
        x);
}

template <typename Scalar>
Var<Scalar> concat_rows(const Var<Scalar>& a, const Var<Scalar>& b)
{
    if (a.cols() != b.cols()) {
        throw ContractError("concat_rows: column mismatch");
    }
    Matrix<Scalar> value(a.rows() + b.rows(), a.cols());
    value.topRows(a.rows()) = a.value();
    value.bottomRows(b.rows()) = b.value();
    return a.graph()->record(
        std::move(value),
        [a, b](const Var<Scalar>& out) {
            accumulate(a, out.grad().topRows(a.rows()));
            accumulate(b, out.grad().bottomRows(b.rows()));
        },
        a, b);
}

/// Mean softmax cross-entropy of `logits` (N, C) against integer labels.
template <typename Scalar>
Var<Scalar> cross_entropy(const Var<Scalar>& logits, std::vector<int> labels)
{
    const Index n = logits.rows();
    if (static_cast<Index>(labels.size()) != n || n == 0) {
        throw ContractError("cross_entropy: label count mismatch");
    }
    Matrix<Scalar> probs(n, logits.cols());
    Scalar loss = 0;
    for (Index r = 0; r < n; ++r) {
        if (labels[r] < 0 || labels[r] >= logits.cols()) {
            throw ContractError("cross_entropy: label out of range");
        }
        const Scalar mx = logits.value().row(r).maxCoeff();
        probs.row(r) = (logits.value().row(r).array() - mx).exp();
        const Scalar z = probs.row(r).sum();
        probs.row(r) /= z;
        loss -= logits.value()(r, labels[r]) - mx - std::log(z);
    }
    Matrix<Scalar> value(1, 1);
    value(0, 0) = loss / Scalar(n);
    return logits.graph()->record(
        std::move(value),
        [logits, labels = std::move(labels), probs](const Var<Scalar>& out) {
            if (!logits.requiresGrad()) {
                return;
            }
            Matrix<Scalar> d = probs;
            for (Index r = 0; r < d.rows(); ++r) {
                d(r, labels[r]) -= Scalar(1);
            }
            logits.grad() += d * (out.grad()(0, 0) / Scalar(d.rows()));
        },
        logits);
}

/// Numerically stable in-place softmax over a row vector.
template <typename Derived>
void softmax_inplace(Eigen::MatrixBase<Derived>& row)
{
    using Scalar = typename Derived::Scalar;
    const Scalar mx = row.maxCoeff();
    row = (row.array() - mx).exp().matrix();
    row /= row.sum();
}

/// Row-wise softmax of a dense matrix.
template <typename Scalar>
void softmax_rows_inplace(Matrix<Scalar>& m)
{
    m.array().colwise() -= m.rowwise().maxCoeff().array();
    m = m.array().exp().matrix();
    m.array().colwise() /= m.rowwise().sum().array();
}

}  // namespace glam

#endif  // GLAM_OPS_HPP
