#include "gradcheck.hpp"

#include <gtest/gtest.h>

TEST(Gradients, SampledCoordinatesOfEveryGroup)
{
    const auto res = gradcheck::run(37);
    for (const char* group : {"vision", "text", "saa", "xattn", "tau"}) {
        ASSERT_TRUE(res.groups.count(group)) << group;
        EXPECT_GT(res.groups.at(group).checked, 0) << group;
    }
    EXPECT_GE(res.passRate(), 0.99);
    for (const auto& [name, gs] : res.groups) {
        EXPECT_EQ(gs.passed, gs.checked) << name << " worst " << gs.worst;
    }
}

TEST(Gradients, VisionEncoderClsProbe)
{
    glam::VisualEncoderConfig cfg;
    cfg.dim = 16;
    cfg.depth = 2;
    cfg.heads = 4;
    cfg.imageHeight = cfg.imageWidth = 32;
    std::mt19937_64 rng(4);
    glam::ParameterSet<double> params;
    glam::add_vision_params(params, cfg, "vision", rng);
    std::normal_distribution<float> n(0.0f, 1.0f);
    glam::Image img(32, 32);
    for (Eigen::Index k = 0; k < img.size(); ++k) {
        img.data()[k] = n(rng);
    }
    auto probe = [&](const glam::ParameterSet<double>& p) { return glam::encode_image(img, p, cfg).cls.sum(); };

    glam::Graph<double> g;
    glam::Binder<double> bind(g, params);
    auto out = glam::vision_forward(bind, cfg, "vision", std::span<const glam::Image>(&img, 1));
    g.backward(glam::sum(out.cls));
    const auto grads = bind.gradients();

    const double h = 1e-3;
    long checked = 0, passed = 0;
    for (const auto& name : params.names()) {
        for (Eigen::Index k = 0; k < params[name].size(); k += 5) {
            double& w = params[name].data()[k];
            const double w0 = w;
            w = w0 + h;
            const double up = probe(params);
            w = w0 - h;
            const double down = probe(params);
            w = w0;
            const double numeric = (up - down) / (2 * h), analytic = grads[name].data()[k];
            ++checked;
            passed += std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6}) < 1e-3;
        }
    }
    EXPECT_GE(double(passed) / double(checked), 0.99) << passed << "/" << checked;
}
