#ifndef GLAM_ENCODERS_HPP
#define GLAM_ENCODERS_HPP

#include "glam/attention.hpp"
#include "glam/image.hpp"
#include "glam/ops.hpp"
#include "glam/params.hpp"

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace glam {

struct VisualEncoderConfig {
    int patchSize = 8;
    int dim = 64;
    int depth = 2;
    int heads = 4;
    int imageHeight = 128;
    int imageWidth = 128;
    int mlpRatio = 4;

    [[nodiscard]] int gridRows() const { return imageHeight / patchSize; }
    [[nodiscard]] int gridCols() const { return imageWidth / patchSize; }
    [[nodiscard]] int patchCount() const { return gridRows() * gridCols(); }

    void validate() const
    {
        if (patchSize <= 0 || imageHeight % patchSize != 0 || imageWidth % patchSize != 0) {
            throw ConfigError("encoder: image size must be divisible by patchSize");
        }
        if (heads <= 0 || dim % heads != 0) {
            throw ConfigError("encoder: dim must be divisible by heads");
        }
        if (depth < 0 || mlpRatio <= 0) {
            throw ConfigError("encoder: invalid depth or mlpRatio");
        }
    }
};

struct TextEncoderConfig {
    int depth = 1;
    int heads = 4;
    int maxLength = 64;
    int mlpRatio = 4;
};

/// Whitespace/lowercase tokenizer over a closed vocabulary. Id 0 is UNK, 1 is CLS.
class Tokenizer {
public:
    static constexpr int kUnk = 0;
    static constexpr int kCls = 1;

    /// Vocabulary of every word in the report template table and synonym table.
    static const Tokenizer& standard();

    explicit Tokenizer(std::vector<std::string> words);

    /// Lowercases, maps punctuation to spaces and splits on whitespace.
    static std::vector<std::string> split(std::string_view text);

    /// CLS followed by word ids, truncated to maxLength. Throws on empty text.
    [[nodiscard]] std::vector<int> encode(std::string_view text, int maxLength) const;

    [[nodiscard]] int unknownCount(std::string_view text) const;
    [[nodiscard]] int vocabSize() const { return static_cast<int>(words_.size()); }
    [[nodiscard]] const std::vector<std::string>& words() const { return words_; }

private:
    std::vector<std::string> words_;
    std::map<std::string, int, std::less<>> ids_;
};

namespace detail {

template <typename Scalar, typename Rng>
void add_block_params(ParameterSet<Scalar>& p, const std::string& prefix, int dim, int mlpRatio, Rng& rng)
{
    const Index d = dim;
    const Index hidden = Index(dim) * mlpRatio;
    p.add(prefix + ".ln1.g", Matrix<Scalar>::Ones(1, d));
    p.add(prefix + ".ln1.b", Matrix<Scalar>::Zero(1, d));
    p.add(prefix + ".qkv.w", glorot<Scalar>(d, 3 * d, rng));
    p.add(prefix + ".qkv.b", Matrix<Scalar>::Zero(1, 3 * d));
    p.add(prefix + ".proj.w", glorot<Scalar>(d, d, rng));
    p.add(prefix + ".proj.b", Matrix<Scalar>::Zero(1, d));
    p.add(prefix + ".ln2.g", Matrix<Scalar>::Ones(1, d));
    p.add(prefix + ".ln2.b", Matrix<Scalar>::Zero(1, d));
    p.add(prefix + ".fc1.w", glorot<Scalar>(d, hidden, rng));
    p.add(prefix + ".fc1.b", Matrix<Scalar>::Zero(1, hidden));
    p.add(prefix + ".fc2.w", glorot<Scalar>(hidden, d, rng));
    p.add(prefix + ".fc2.b", Matrix<Scalar>::Zero(1, d));
}

template <typename Scalar>
Var<Scalar> linear(Binder<Scalar>& bind, const std::string& prefix, const Var<Scalar>& x)
{
    return matmul(x, bind(prefix + ".w")) + bind(prefix + ".b");
}

/// Pre-norm transformer block: x + attn(ln(x)), then + mlp(ln(.)).
template <typename Scalar>
Var<Scalar> transformer_block(Binder<Scalar>& bind, const std::string& prefix, const Var<Scalar>& x,
                              const std::vector<int>& offsets, int heads)
{
    Var<Scalar> h = layer_norm(x, bind(prefix + ".ln1.g"), bind(prefix + ".ln1.b"));
    Var<Scalar> attn = self_attention(linear(bind, prefix + ".qkv", h), offsets, heads);
    Var<Scalar> x1 = x + linear(bind, prefix + ".proj", attn);
    Var<Scalar> h2 = layer_norm(x1, bind(prefix + ".ln2.g"), bind(prefix + ".ln2.b"));
    Var<Scalar> mlp = linear(bind, prefix + ".fc2", gelu(linear(bind, prefix + ".fc1", h2)));
    return x1 + mlp;
}

}  // namespace detail

template <typename Scalar, typename Rng>
void add_vision_params(ParameterSet<Scalar>& p, const VisualEncoderConfig& cfg, const std::string& prefix, Rng& rng)
{
    cfg.validate();
    const Index d = cfg.dim;
    const Index patchDim = Index(cfg.patchSize) * cfg.patchSize;
    p.add(prefix + ".patch.w", glorot<Scalar>(patchDim, d, rng));
    p.add(prefix + ".patch.b", Matrix<Scalar>::Zero(1, d));
    p.add(prefix + ".cls", random_normal<Scalar>(1, d, 0.02, rng));
    p.add(prefix + ".pos", random_normal<Scalar>(cfg.patchCount() + 1, d, 0.02, rng));
    for (int b = 0; b < cfg.depth; ++b) {
        detail::add_block_params(p, prefix + ".block" + std::to_string(b), cfg.dim, cfg.mlpRatio, rng);
    }
    p.add(prefix + ".ln.g", Matrix<Scalar>::Ones(1, d));
    p.add(prefix + ".ln.b", Matrix<Scalar>::Zero(1, d));
}

template <typename Scalar, typename Rng>
void add_text_params(ParameterSet<Scalar>& p, const TextEncoderConfig& cfg, int dim, int vocabSize,
                     const std::string& prefix, Rng& rng)
{
    if (cfg.heads <= 0 || dim % cfg.heads != 0 || cfg.maxLength < 2) {
        throw ConfigError("text encoder: invalid heads or maxLength");
    }
    p.add(prefix + ".tok", random_normal<Scalar>(vocabSize, dim, 0.02, rng));
    p.add(prefix + ".pos", random_normal<Scalar>(cfg.maxLength, dim, 0.02, rng));
    for (int b = 0; b < cfg.depth; ++b) {
        detail::add_block_params(p, prefix + ".block" + std::to_string(b), dim, cfg.mlpRatio, rng);
    }
    p.add(prefix + ".ln.g", Matrix<Scalar>::Ones(1, dim));
    p.add(prefix + ".ln.b", Matrix<Scalar>::Zero(1, dim));
}

/// Graph-level vision outputs for a batch of images.
template <typename Scalar>
struct VisionOutputs {
    Var<Scalar> cls;   ///< (B, d)
    Var<Scalar> grid;  ///< (B * Gr * Gc, d), row b*N + r*Gc + c
    int images = 0;
};

/// Splits images into flattened non-overlapping patches: row b*N + r*Gc + c,
/// pixels of a patch in row-major order.
template <typename Scalar>
Matrix<Scalar> patchify(std::span<const Image> images, const VisualEncoderConfig& cfg)
{
    const int p = cfg.patchSize;
    const int gr = cfg.gridRows();
    const int gc = cfg.gridCols();
    Matrix<Scalar> out(Index(images.size()) * gr * gc, Index(p) * p);
    for (std::size_t b = 0; b < images.size(); ++b) {
        const Image& img = images[b];
        if (img.rows() != cfg.imageHeight || img.cols() != cfg.imageWidth) {
            throw ContractError("encode_image: image shape does not match encoder config");
        }
        for (int r = 0; r < gr; ++r) {
            for (int c = 0; c < gc; ++c) {
                const Index row = (Index(b) * gr + r) * gc + c;
                for (int y = 0; y < p; ++y) {
                    for (int x = 0; x < p; ++x) {
                        out(row, y * p + x) = static_cast<Scalar>(img(r * p + y, c * p + x));
                    }
                }
            }
        }
    }
    return out;
}

/// ViT forward: patch embed, prepend CLS, add positions, pre-norm blocks, final norm.
template <typename Scalar>
VisionOutputs<Scalar> vision_forward(Binder<Scalar>& bind, const VisualEncoderConfig& cfg, const std::string& prefix,
                                     std::span<const Image> images)
{
    cfg.validate();
    Graph<Scalar>& g = bind.graph();
    const int n = cfg.patchCount();
    const int t = n + 1;
    const int batch = static_cast<int>(images.size());

    Var<Scalar> patches = g.input(patchify<Scalar>(images, cfg));
    Var<Scalar> emb = detail::linear(bind, prefix + ".patch", patches);
    Var<Scalar> withCls = concat_rows(bind(prefix + ".cls"), emb);

    std::vector<int> tokenIdx, posIdx, offsets{0};
    tokenIdx.reserve(std::size_t(batch) * t);
    for (int b = 0; b < batch; ++b) {
        tokenIdx.push_back(0);
        posIdx.push_back(0);
        for (int k = 0; k < n; ++k) {
            tokenIdx.push_back(1 + b * n + k);
            posIdx.push_back(1 + k);
        }
        offsets.push_back((b + 1) * t);
    }
    Var<Scalar> x = gather_rows(withCls, tokenIdx) + gather_rows(bind(prefix + ".pos"), posIdx);
    for (int blk = 0; blk < cfg.depth; ++blk) {
        x = detail::transformer_block(bind, prefix + ".block" + std::to_string(blk), x, offsets, cfg.heads);
    }
    x = layer_norm(x, bind(prefix + ".ln.g"), bind(prefix + ".ln.b"));

    std::vector<int> clsIdx, gridIdx;
    for (int b = 0; b < batch; ++b) {
        clsIdx.push_back(b * t);
        for (int k = 0; k < n; ++k) {
            gridIdx.push_back(b * t + 1 + k);
        }
    }
    return {gather_rows(x, clsIdx), gather_rows(x, gridIdx), batch};
}

/// Text transformer forward over token id sequences (each starting with CLS).
/// Returns the CLS-position output, (B, d).
template <typename Scalar>
Var<Scalar> text_forward(Binder<Scalar>& bind, const TextEncoderConfig& cfg, const std::string& prefix,
                         const std::vector<std::vector<int>>& sequences)
{
    std::vector<int> ids, pos, offsets{0}, clsIdx;
    for (const auto& seq : sequences) {
        if (seq.empty() || static_cast<int>(seq.size()) > cfg.maxLength) {
            throw ContractError("encode_text: sequence empty or longer than maxLength");
        }
        clsIdx.push_back(offsets.back());
        for (std::size_t k = 0; k < seq.size(); ++k) {
            ids.push_back(seq[k]);
            pos.push_back(static_cast<int>(k));
        }
        offsets.push_back(offsets.back() + static_cast<int>(seq.size()));
    }
    Var<Scalar> x = gather_rows(bind(prefix + ".tok"), ids) + gather_rows(bind(prefix + ".pos"), pos);
    for (int blk = 0; blk < cfg.depth; ++blk) {
        x = detail::transformer_block(bind, prefix + ".block" + std::to_string(blk), x, offsets, cfg.heads);
    }
    x = layer_norm(x, bind(prefix + ".ln.g"), bind(prefix + ".ln.b"));
    return gather_rows(x, clsIdx);
}

/// Value-level encoder outputs for one image.
template <typename Scalar>
struct PatchTokens {
    RowVector<Scalar> cls;
    Matrix<Scalar> grid;  ///< (Gr * Gc, d), row r*Gc + c; column index = AP position
    int gridRows = 0;
    int gridCols = 0;
};

template <typename Scalar>
PatchTokens<Scalar> encode_image(const Image& image, const ParameterSet<Scalar>& params,
                                 const VisualEncoderConfig& cfg, const std::string& prefix = "vision")
{
    Graph<Scalar> g(false);
    Binder<Scalar> bind(g, params);
    auto out = vision_forward(bind, cfg, prefix, std::span<const Image>(&image, 1));
    return {out.cls.value().row(0), out.grid.value(), cfg.gridRows(), cfg.gridCols()};
}

template <typename Scalar>
RowVector<Scalar> encode_text(std::string_view text, const ParameterSet<Scalar>& params, const TextEncoderConfig& cfg,
                              const Tokenizer& tokenizer = Tokenizer::standard(), const std::string& prefix = "text")
{
    Graph<Scalar> g(false);
    Binder<Scalar> bind(g, params);
    std::vector<std::vector<int>> seqs{tokenizer.encode(text, cfg.maxLength)};
    return text_forward(bind, cfg, prefix, seqs).value().row(0);
}

}  // namespace glam

#endif  // GLAM_ENCODERS_HPP
