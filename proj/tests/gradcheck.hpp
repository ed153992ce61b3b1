// Central-difference check of the full pretraining loss on a small instance.
#ifndef GLAM_TESTS_GRADCHECK_HPP
#define GLAM_TESTS_GRADCHECK_HPP

#include "glam/model.hpp"
#include "glam/report.hpp"

#include <map>
#include <random>
#include <string>

namespace gradcheck {

struct GroupStats {
    long checked = 0;
    long passed = 0;
    double worst = 0;
};

struct Result {
    std::map<std::string, GroupStats> groups;
    long checked = 0;
    long passed = 0;

    [[nodiscard]] double passRate() const { return checked ? double(passed) / double(checked) : 0.0; }
};

inline std::string group_of(const std::string& name)
{
    return name.substr(0, name.find('.'));
}

inline glam::ModelConfig small_model()
{
    glam::ModelConfig cfg;
    cfg.vision.dim = 32;
    cfg.vision.depth = 1;
    cfg.vision.heads = 4;
    cfg.vision.imageHeight = 64;
    cfg.vision.imageWidth = 64;
    cfg.vision.mlpRatio = 2;
    cfg.text.depth = 1;
    cfg.text.heads = 4;
    cfg.text.maxLength = 16;
    cfg.text.mlpRatio = 2;
    cfg.alignment.m = 16;
    cfg.alignment.heads = 4;
    return cfg;
}

inline glam::PairBatch random_batch(const glam::ModelConfig& cfg, int b, std::mt19937_64& rng)
{
    std::normal_distribution<float> n(0.0f, 1.0f);
    glam::PairBatch batch;
    const auto& tok = glam::Tokenizer::standard();
    const auto sentences = glam::all_template_sentences();
    for (int i = 0; i < b; ++i) {
        glam::Image cc(cfg.vision.imageHeight, cfg.vision.imageWidth), mlo(cc.rows(), cc.cols());
        for (Eigen::Index k = 0; k < cc.size(); ++k) {
            cc.data()[k] = n(rng);
            mlo.data()[k] = n(rng);
        }
        batch.cc.push_back(cc);
        batch.mlo.push_back(mlo);
        batch.tokens.push_back(tok.encode(sentences[std::size_t(i) % sentences.size()], cfg.text.maxLength));
    }
    return batch;
}

/// Checks every `stride`-th coordinate of each parameter, starting at its
/// first (stride 1 = all).
/// A coordinate passes when |a - n| / max(|a|, |n|, floor) < tol.
inline Result run(int stride = 1, double h = 1e-3, double tol = 1e-3, double floor = 1e-6)
{
    const glam::ModelConfig cfg = small_model();
    std::mt19937_64 rng(17);
    glam::ParameterSet<double> params = glam::init_model<double>(cfg, rng);
    // Move the temperature off its initial value and un-zero the biases so
    // every group carries a generic gradient.
    std::normal_distribution<double> n(0.0, 0.05);
    for (const auto& name : params.names()) {
        if (name.size() > 2 && name.compare(name.size() - 2, 2, ".b") == 0) {
            for (Eigen::Index k = 0; k < params[name].size(); ++k) {
                params[name].data()[k] = n(rng);
            }
        }
    }
    params["tau.raw"](0, 0) = std::log(std::expm1(0.5));
    const glam::PairBatch batch = random_batch(cfg, 2, rng);

    glam::Graph<double> g;
    glam::Binder<double> bind(g, params);
    const auto losses = glam::forward_losses(bind, cfg, batch);
    g.backward(losses.total);
    const glam::ParameterSet<double> grads = bind.gradients();

    Result res;
    for (const auto& name : params.names()) {
        GroupStats& gs = res.groups[group_of(name)];
        for (Eigen::Index k = 0; k < params[name].size(); k += stride) {
            double& w = params[name].data()[k];
            const double w0 = w;
            w = w0 + h;
            const double up = glam::final_loss(params, cfg, batch).total;
            w = w0 - h;
            const double down = glam::final_loss(params, cfg, batch).total;
            w = w0;
            const double numeric = (up - down) / (2 * h);
            const double analytic = grads[name].data()[k];
            const double rel = std::abs(analytic - numeric) /
                               std::max({std::abs(analytic), std::abs(numeric), floor});
            ++gs.checked;
            ++res.checked;
            gs.worst = std::max(gs.worst, rel);
            if (rel < tol) {
                ++gs.passed;
                ++res.passed;
            }
        }
    }
    return res;
}

}  // namespace gradcheck

#endif  // GLAM_TESTS_GRADCHECK_HPP
