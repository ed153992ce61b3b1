#ifndef GLAM_MODEL_HPP
#define GLAM_MODEL_HPP

#include "glam/alignment.hpp"
#include "glam/encoders.hpp"

#include <memory>
#include <span>
#include <string>
#include <vector>

namespace glam {

struct ModelConfig {
    VisualEncoderConfig vision;
    TextEncoderConfig text;
    AlignmentConfig alignment;
    bool sharedVisualEncoder = true;

    [[nodiscard]] std::string mloPrefix() const { return sharedVisualEncoder ? "vision" : "vision_mlo"; }
};

template <typename Scalar, typename Rng>
ParameterSet<Scalar> init_model(const ModelConfig& cfg, Rng& rng, int vocabSize = Tokenizer::standard().vocabSize())
{
    ParameterSet<Scalar> p;
    add_vision_params(p, cfg.vision, "vision", rng);
    if (!cfg.sharedVisualEncoder) {
        add_vision_params(p, cfg.vision, "vision_mlo", rng);
    }
    add_text_params(p, cfg.text, cfg.vision.dim, vocabSize, "text", rng);
    add_alignment_params(p, cfg.alignment, cfg.vision.dim, rng);
    return p;
}

/// One pretraining batch: preprocessed view pairs and tokenised reports.
struct PairBatch {
    std::vector<Image> cc;
    std::vector<Image> mlo;
    std::vector<std::vector<int>> tokens;

    [[nodiscard]] int size() const { return static_cast<int>(cc.size()); }
};

template <typename Scalar>
struct LossVars {
    Var<Scalar> globalMV;
    Var<Scalar> globalIT;
    Var<Scalar> local;  ///< invalid when GLA is off
    Var<Scalar> total;
    Var<Scalar> tau;
};

template <typename Scalar>
struct LossBreakdown {
    Scalar globalMV = 0;
    Scalar globalIT = 0;
    Scalar local = 0;
    Scalar total = 0;
    Scalar tau = 0;
};

template <typename Scalar>
LossBreakdown<Scalar> breakdown(const LossVars<Scalar>& v)
{
    return {v.globalMV.item(), v.globalIT.item(), v.local.valid() ? v.local.item() : Scalar(0), v.total.item(),
            v.tau.item()};
}

/// Extra outputs of a forward pass, for inspection.
template <typename Scalar>
struct ForwardTrace {
    std::vector<int> denominatorSizes;
    std::shared_ptr<AttentionWeights<Scalar>> attention = std::make_shared<AttentionWeights<Scalar>>();
};

/// Builds L_final = L_global + L_local on the graph behind `bind`.
template <typename Scalar>
LossVars<Scalar> forward_losses(Binder<Scalar>& bind, const ModelConfig& cfg, const PairBatch& batch,
                                ForwardTrace<Scalar>* trace = nullptr)
{
    const int b = batch.size();
    if (b < 1 || static_cast<int>(batch.mlo.size()) != b || static_cast<int>(batch.tokens.size()) != b) {
        throw ContractError("final_loss: batch must hold B CC images, B MLO images and B reports");
    }
    LossVars<Scalar> out;
    out.tau = temperature(bind);

    Var<Scalar> vCC, vMLO, gridCC, gridMLO;
    if (cfg.sharedVisualEncoder) {
        std::vector<Image> both(batch.cc);
        both.insert(both.end(), batch.mlo.begin(), batch.mlo.end());
        auto vis = vision_forward(bind, cfg.vision, "vision", std::span<const Image>(both));
        const int n = cfg.vision.patchCount();
        std::vector<int> first(b), second(b), gFirst, gSecond;
        for (int i = 0; i < b; ++i) {
            first[i] = i;
            second[i] = b + i;
        }
        for (int i = 0; i < b * n; ++i) {
            gFirst.push_back(i);
            gSecond.push_back(b * n + i);
        }
        vCC = gather_rows(vis.cls, first);
        vMLO = gather_rows(vis.cls, second);
        if (cfg.alignment.gla) {
            gridCC = gather_rows(vis.grid, gFirst);
            gridMLO = gather_rows(vis.grid, gSecond);
        }
    } else {
        auto visCC = vision_forward(bind, cfg.vision, "vision", std::span<const Image>(batch.cc));
        auto visMLO = vision_forward(bind, cfg.vision, cfg.mloPrefix(), std::span<const Image>(batch.mlo));
        vCC = visCC.cls;
        vMLO = visMLO.cls;
        gridCC = visCC.grid;
        gridMLO = visMLO.grid;
    }
    Var<Scalar> t = text_forward(bind, cfg.text, "text", batch.tokens);

    auto [mv, it] = global_loss_terms(vCC, vMLO, t, out.tau);
    out.globalMV = mv;
    out.globalIT = it;
    out.total = mv + it;
    if (cfg.alignment.gla) {
        const int gr = cfg.vision.gridRows();
        const int gc = cfg.vision.gridCols();
        Var<Scalar> superCC = aggregate_super_patches(bind, cfg.alignment, gridCC, b, gr, gc);
        Var<Scalar> superMLO = aggregate_super_patches(bind, cfg.alignment, gridMLO, b, gr, gc);
        out.local = local_loss(bind, cfg.alignment, superCC, superMLO, b, out.tau,
                               trace ? &trace->denominatorSizes : nullptr, trace ? trace->attention : nullptr);
        out.total = out.total + out.local;
    }
    return out;
}

/// Value-level final loss for a batch.
template <typename Scalar>
LossBreakdown<Scalar> final_loss(const ParameterSet<Scalar>& params, const ModelConfig& cfg, const PairBatch& batch,
                                 ForwardTrace<Scalar>* trace = nullptr)
{
    Graph<Scalar> g(false);
    Binder<Scalar> bind(g, params);
    return breakdown(forward_losses(bind, cfg, batch, trace));
}

}  // namespace glam

#endif  // GLAM_MODEL_HPP
