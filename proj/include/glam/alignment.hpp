#ifndef GLAM_ALIGNMENT_HPP
#define GLAM_ALIGNMENT_HPP

#include "glam/attention.hpp"
#include "glam/contrastive.hpp"
#include "glam/params.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

namespace glam {

struct AlignmentConfig {
    int m = 256;
    int heads = 4;
    bool gla = true;         ///< geometry-guided local alignment
    bool spn = true;         ///< same-position (patient) negatives
    bool saa = true;         ///< spatial attention aggregation; block means when off
    bool apSampling = true;  ///< attend to the AP slice; all M patches when off
    double tauInit = 0.07;
    bool literalEq4 = false;
    bool dotProductAttention = false;

    [[nodiscard]] int side() const { return static_cast<int>(std::lround(std::sqrt(double(m)))); }

    void validate() const
    {
        if (m < 1 || side() * side() != m) {
            throw ConfigError("alignment: M must be a perfect square");
        }
        if (heads <= 0 || !(tauInit > 0.0)) {
            throw ConfigError("alignment: heads must be positive and tauInit > 0");
        }
    }
};

/// Start of interval k when [0, n) is split into `parts` nearly equal pieces.
inline int interval_start(int k, int n, int parts)
{
    return static_cast<int>((static_cast<long long>(k) * n) / parts);
}

/// Index of the interval that contains position x.
inline int interval_of(int x, int n, int parts)
{
    for (int k = 0; k < parts; ++k) {
        if (x < interval_start(k + 1, n, parts)) {
            return k;
        }
    }
    return parts - 1;
}

/// Raw-token indices of each super-patch (i, j), listed in row-major (i, j)
/// order. Rows and columns are split into `side` contiguous intervals.
inline std::vector<std::vector<int>> super_patch_blocks(int gridRows, int gridCols, int side)
{
    if (side < 1 || gridRows < side || gridCols < side) {
        throw ConfigError("spatial_attention_aggregate: raw grid smaller than sqrt(M)");
    }
    std::vector<std::vector<int>> blocks;
    blocks.reserve(std::size_t(side) * side);
    for (int i = 0; i < side; ++i) {
        for (int j = 0; j < side; ++j) {
            std::vector<int> idx;
            for (int r = interval_start(i, gridRows, side); r < interval_start(i + 1, gridRows, side); ++r) {
                for (int c = interval_start(j, gridCols, side); c < interval_start(j + 1, gridCols, side); ++c) {
                    idx.push_back(r * gridCols + c);
                }
            }
            blocks.push_back(std::move(idx));
        }
    }
    return blocks;
}

template <typename Scalar, typename Rng>
void add_alignment_params(ParameterSet<Scalar>& p, const AlignmentConfig& cfg, int dim, Rng& rng)
{
    cfg.validate();
    if (dim % cfg.heads != 0) {
        throw ConfigError("alignment: dim must be divisible by cross-attention heads");
    }
    const Index d = dim;
    p.add("saa.query", random_normal<Scalar>(1, d, 1.0 / std::sqrt(double(d)), rng));
    p.add("saa.key.w", glorot<Scalar>(d, d, rng));
    p.add("saa.value.w", glorot<Scalar>(d, d, rng));
    for (const char* name : {"xattn.q", "xattn.k", "xattn.v", "xattn.o"}) {
        p.add(std::string(name) + ".w", glorot<Scalar>(d, d, rng));
        p.add(std::string(name) + ".b", Matrix<Scalar>::Zero(1, d));
    }
    Matrix<Scalar> raw(1, 1);
    raw(0, 0) = static_cast<Scalar>(std::log(std::expm1(cfg.tauInit)));  // softplus^-1
    p.add("tau.raw", raw);
}

/// Learnable temperature, softplus(raw) > 0.
template <typename Scalar>
Var<Scalar> temperature(Binder<Scalar>& bind)
{
    return softplus(bind("tau.raw"));
}

/// Aggregates raw patch tokens (B * Gr * Gc, d) into super-patches (B * M, d),
/// row b*M + i*sqrt(M) + j. With SAA each block is pooled by one shared
/// learned query against key-projected tokens (scaled by 1/sqrt(d)) over
/// value-projected tokens; without SAA by a plain block mean.
template <typename Scalar>
Var<Scalar> aggregate_super_patches(Binder<Scalar>& bind, const AlignmentConfig& cfg, const Var<Scalar>& raw,
                                    int batch, int gridRows, int gridCols)
{
    cfg.validate();
    const auto local = super_patch_blocks(gridRows, gridCols, cfg.side());
    const int n = gridRows * gridCols;
    if (raw.rows() != Index(batch) * n) {
        throw ContractError("spatial_attention_aggregate: raw grid row count mismatch");
    }
    std::vector<std::vector<int>> groups;
    groups.reserve(std::size_t(batch) * local.size());
    for (int b = 0; b < batch; ++b) {
        for (const auto& blk : local) {
            std::vector<int> idx(blk);
            for (int& r : idx) {
                r += b * n;
            }
            groups.push_back(std::move(idx));
        }
    }
    if (!cfg.saa) {
        return group_mean(raw, std::move(groups));
    }
    const Scalar scale = Scalar(1) / std::sqrt(Scalar(raw.cols()));
    return attention_pool(matmul(raw, bind("saa.key.w")), bind("saa.query"), matmul(raw, bind("saa.value.w")),
                          std::move(groups), scale);
}

/// Cross-view positives for every super-patch query.
///
/// `superCC` and `superMLO` are (B*M, d). Returns P (2*B*M, d) ordered
/// [view][sample][position], matching concat(superCC, superMLO). A query at
/// (i, j) of one view attends to column j of the other view of the same
/// sample (or to all M patches when AP sampling is off). Q/K/V/output
/// projections are shared by both directions.
template <typename Scalar>
Var<Scalar> cross_view_positives(Binder<Scalar>& bind, const AlignmentConfig& cfg, const Var<Scalar>& queries,
                                 int batch, std::shared_ptr<AttentionWeights<Scalar>> record = nullptr,
                                 std::vector<AttentionGroup>* groupsOut = nullptr)
{
    const int m = cfg.m;
    const int side = cfg.side();
    if (queries.rows() != Index(2) * batch * m) {
        throw ContractError("cross_view_positive: expected 2*B*M super-patches");
    }
    auto row = [batch, m](int v, int b, int k) { return (v * batch + b) * m + k; };
    std::vector<AttentionGroup> groups;
    for (int v = 0; v < 2; ++v) {
        const int other = 1 - v;
        for (int b = 0; b < batch; ++b) {
            if (cfg.apSampling) {
                for (int j = 0; j < side; ++j) {
                    AttentionGroup grp;
                    for (int i = 0; i < side; ++i) {
                        grp.queries.push_back(row(v, b, i * side + j));
                        grp.keys.push_back(row(other, b, i * side + j));
                    }
                    groups.push_back(std::move(grp));
                }
            } else {
                AttentionGroup grp;
                for (int k = 0; k < m; ++k) {
                    grp.queries.push_back(row(v, b, k));
                    grp.keys.push_back(row(other, b, k));
                }
                groups.push_back(std::move(grp));
            }
        }
    }
    if (groupsOut) {
        *groupsOut = groups;
    }
    auto proj = [&bind](const std::string& name, const Var<Scalar>& x) {
        return matmul(x, bind(name + ".w")) + bind(name + ".b");
    };
    Var<Scalar> attended = cross_attention(proj("xattn.q", queries), proj("xattn.k", queries),
                                           proj("xattn.v", queries), std::move(groups), cfg.heads,
                                           !cfg.dotProductAttention, std::move(record));
    return proj("xattn.o", attended);
}

/// Multi-view global objective:
///   L(vCC, vMLO) + 1/2 [L(vCC, t) + L(t, vCC) + L(vMLO, t) + L(t, vMLO)].
/// Returns {multi-view term, image-text term}.
template <typename Scalar>
std::pair<Var<Scalar>, Var<Scalar>> global_loss_terms(const Var<Scalar>& vCC, const Var<Scalar>& vMLO,
                                                      const Var<Scalar>& t, const Var<Scalar>& tau)
{
    if (vCC.rows() != vMLO.rows() || vCC.rows() != t.rows() || vCC.cols() != vMLO.cols() || vCC.cols() != t.cols()) {
        throw ContractError("global_loss: inconsistent shapes");
    }
    Var<Scalar> mv = info_nce(vCC, vMLO, tau);
    Var<Scalar> it = (info_nce(vCC, t, tau) + info_nce(t, vCC, tau) + info_nce(vMLO, t, tau) + info_nce(t, vMLO, tau)) *
                     Scalar(0.5);
    return {mv, it};
}

/// Local alignment loss over a batch of super-patch grids, (B*M, d) each.
template <typename Scalar>
Var<Scalar> local_loss(Binder<Scalar>& bind, const AlignmentConfig& cfg, const Var<Scalar>& superCC,
                       const Var<Scalar>& superMLO, int batch, const Var<Scalar>& tau,
                       std::vector<int>* denominatorSizes = nullptr,
                       std::shared_ptr<AttentionWeights<Scalar>> record = nullptr)
{
    if (superCC.rows() != superMLO.rows() || superCC.rows() != Index(batch) * cfg.m) {
        throw ContractError("local_loss: grids must both be (B*M, d)");
    }
    Var<Scalar> queries = concat_rows(superCC, superMLO);
    Var<Scalar> positives = cross_view_positives(bind, cfg, queries, batch, std::move(record));
    LocalLossOptions opts;
    opts.patientNegatives = cfg.spn;
    opts.literalEq4 = cfg.literalEq4;
    return local_nce(queries, positives, batch, cfg.m, tau, opts, denominatorSizes);
}

// ---------------------------------------------------------------------------
// Value-level helpers mirroring the graph ops, for evaluation and tests.

template <typename Scalar>
Scalar info_nce(const Matrix<Scalar>& z, const Matrix<Scalar>& zTilde, Scalar tau)
{
    Graph<Scalar> g(false);
    Matrix<Scalar> t(1, 1);
    t(0, 0) = tau;
    return info_nce(g.input(z), g.input(zTilde), g.input(t)).item();
}

template <typename Scalar>
Scalar global_loss(const Matrix<Scalar>& vCC, const Matrix<Scalar>& vMLO, const Matrix<Scalar>& t, Scalar tau)
{
    Graph<Scalar> g(false);
    Matrix<Scalar> tm(1, 1);
    tm(0, 0) = tau;
    auto [mv, it] = global_loss_terms(g.input(vCC), g.input(vMLO), g.input(t), g.input(tm));
    return mv.item() + it.item();
}

/// Super-patch grid of one image view.
template <typename Scalar>
struct SuperPatchGrid {
    Matrix<Scalar> grid;  ///< (M, d), row i*sqrt(M) + j
    int m = 0;
    View view = View::CC;

    [[nodiscard]] int side() const { return static_cast<int>(std::lround(std::sqrt(double(m)))); }
};

template <typename Scalar>
SuperPatchGrid<Scalar> spatial_attention_aggregate(const Matrix<Scalar>& raw, int gridRows, int gridCols,
                                                   const AlignmentConfig& cfg, const ParameterSet<Scalar>& params,
                                                   View view = View::CC)
{
    Graph<Scalar> g(false);
    Binder<Scalar> bind(g, params);
    Var<Scalar> out = aggregate_super_patches(bind, cfg, g.input(raw), 1, gridRows, gridCols);
    return {out.value(), cfg.m, view};
}

/// AP slice j: the sqrt(M) super-patches of column j, top to bottom.
template <typename Scalar>
struct APSlice {
    Matrix<Scalar> tokens;
    int columnIndex = 0;
    View view = View::CC;
};

template <typename Scalar>
APSlice<Scalar> ap_slice(const SuperPatchGrid<Scalar>& grid, int j)
{
    const int side = grid.side();
    if (j < 0 || j >= side) {
        throw ContractError("ap_slice: column index out of range");
    }
    APSlice<Scalar> slice{Matrix<Scalar>(side, grid.grid.cols()), j, grid.view};
    for (int i = 0; i < side; ++i) {
        slice.tokens.row(i) = grid.grid.row(i * side + j);
    }
    return slice;
}

template <typename Scalar>
struct CrossViewResult {
    RowVector<Scalar> positive;
    Matrix<Scalar> weights;  ///< (heads, |slice|)
};

/// Cross-view positive of one query against one slice.
template <typename Scalar>
CrossViewResult<Scalar> cross_view_positive(const RowVector<Scalar>& q, const Matrix<Scalar>& slice,
                                            const ParameterSet<Scalar>& params, const AlignmentConfig& cfg)
{
    if (q.cols() != slice.cols()) {
        throw ContractError("cross_view_positive: slice/query dimension mismatch");
    }
    Graph<Scalar> g(false);
    Binder<Scalar> bind(g, params);
    auto proj = [&bind](const std::string& name, const Var<Scalar>& x) {
        return matmul(x, bind(name + ".w")) + bind(name + ".b");
    };
    Var<Scalar> qv = g.input(q);
    Var<Scalar> sv = g.input(slice);
    AttentionGroup grp;
    grp.queries = {0};
    for (int k = 0; k < slice.rows(); ++k) {
        grp.keys.push_back(k);
    }
    auto rec = std::make_shared<AttentionWeights<Scalar>>();
    Var<Scalar> o = cross_attention(proj("xattn.q", qv), proj("xattn.k", sv), proj("xattn.v", sv), {grp}, cfg.heads,
                                    !cfg.dotProductAttention, rec);
    CrossViewResult<Scalar> res;
    res.positive = proj("xattn.o", o).value().row(0);
    res.weights.resize(cfg.heads, slice.rows());
    for (int h = 0; h < cfg.heads; ++h) {
        res.weights.row(h) = rec->probs[h].row(0);
    }
    return res;
}

}  // namespace glam

#endif  // GLAM_ALIGNMENT_HPP
