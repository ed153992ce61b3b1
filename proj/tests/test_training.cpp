#include "glam/training.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include <unistd.h>

using namespace glam;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

RunConfig tiny_config()
{
    RunConfig c;
    c.seed = 11;
    c.data.count = 20;
    c.preprocess.targetSize = 32;
    c.model.vision.imageHeight = c.model.vision.imageWidth = 32;
    c.model.vision.dim = 16;
    c.model.vision.depth = 1;
    c.model.text.depth = 1;
    c.model.text.maxLength = 32;
    c.model.alignment.m = 4;
    c.eval.ablationM = {4, 16};
    c.training.batchSize = 4;
    c.training.steps = 3;
    c.training.checkpointEvery = 2;
    return c;
}

class TinyRun : public ::testing::Test {
protected:
    static void SetUpTestSuite()
    {
        root_ = fs::temp_directory_path() / ("glam_train_" + std::to_string(::getpid()));
        fs::remove_all(root_);
        manifest_ = build_dataset(tiny_config(), root_ / "data");
    }
    static void TearDownTestSuite() { fs::remove_all(root_); }

    static fs::path root_;
    static DatasetManifest manifest_;
};

fs::path TinyRun::root_;
DatasetManifest TinyRun::manifest_;

bool same_params(const ParameterSet<float>& a, const ParameterSet<float>& b)
{
    if (a.names() != b.names()) {
        return false;
    }
    for (const auto& n : a.names()) {
        if (a[n].rows() != b[n].rows() || a[n].cols() != b[n].cols() ||
            std::memcmp(a[n].data(), b[n].data(), sizeof(float) * std::size_t(a[n].size())) != 0) {
            return false;
        }
    }
    return true;
}

}  // namespace

TEST(BalancedSampler, SkewedClassesDrawnEvenly)
{
    std::vector<int> labels(100, 0);
    std::fill(labels.begin() + 90, labels.end(), 1);
    const BalancedSampler s(labels, 2);
    std::mt19937_64 rng(5);
    long ones = 0, total = 0;
    for (int b = 0; b < 10000; ++b) {
        for (int idx : s.next(10, rng)) {
            ones += labels[std::size_t(idx)] == 1;
            ++total;
        }
    }
    EXPECT_NEAR(double(ones) / double(total), 0.5, 0.02);
}

TEST(BalancedSampler, SingleClassIsUniform)
{
    const BalancedSampler s(std::vector<int>(8, 0), 1);
    std::mt19937_64 rng(1);
    std::vector<int> hits(8, 0);
    for (int b = 0; b < 4000; ++b) {
        for (int idx : s.next(2, rng)) {
            ++hits[std::size_t(idx)];
        }
    }
    for (int h : hits) {
        EXPECT_NEAR(h / 8000.0, 1.0 / 8, 0.02);
    }
}

TEST(BalancedSampler, DeterministicAndRejectsMissingClass)
{
    const BalancedSampler s({0, 1, 2, 1, 0}, 3);
    std::mt19937_64 a(3), b(3);
    for (int i = 0; i < 20; ++i) {
        EXPECT_EQ(s.next(4, a), s.next(4, b));
    }
    EXPECT_THROW(BalancedSampler({0, 0, 2}, 3), ConfigError);
    EXPECT_THROW(BalancedSampler({0, 5}, 3), ConfigError);
}

TEST(CosineLr, Schedule)
{
    EXPECT_DOUBLE_EQ(cosine_lr(0.1, 0, 100), 0.1);
    EXPECT_NEAR(cosine_lr(0.1, 50, 100), 0.05, 1e-15);
    EXPECT_NEAR(cosine_lr(0.1, 100, 100), 0.0, 1e-15);
    for (int s = 0; s <= 10; ++s) {
        EXPECT_NEAR(cosine_lr(2.0, s, 10), 2.0 * 0.5 * (1 + std::cos(std::numbers::pi * s / 10)), 1e-15);
    }
}

TEST(Sgd, MomentumAndDecayOnWeightsOnly)
{
    ParameterSet<float> p, v, g;
    p.add("a.w", Matrix<float>::Constant(1, 1, 2.0f));
    p.add("a.b", Matrix<float>::Constant(1, 1, 2.0f));
    v = p.zerosLike();
    g = p.zerosLike();
    g["a.w"](0, 0) = g["a.b"](0, 0) = 1.0f;
    sgd_step(p, v, g, 0.1, 0.9, 0.5);
    EXPECT_FLOAT_EQ(v["a.w"](0, 0), 2.0f);  // g + wd * w
    EXPECT_FLOAT_EQ(v["a.b"](0, 0), 1.0f);
    EXPECT_FLOAT_EQ(p["a.w"](0, 0), 1.8f);
    EXPECT_FLOAT_EQ(p["a.b"](0, 0), 1.9f);
    sgd_step(p, v, g, 0.1, 0.9, 0.0);
    EXPECT_FLOAT_EQ(v["a.b"](0, 0), 1.9f);
}

TEST(AdamW, FirstStepMovesByLr)
{
    ParameterSet<float> p, m1, m2, g;
    p.add("a.b", Matrix<float>::Constant(1, 2, 1.0f));
    m1 = p.zerosLike();
    m2 = p.zerosLike();
    g = p.zerosLike();
    g["a.b"](0, 0) = 3.0f;
    g["a.b"](0, 1) = -0.01f;
    adamw_step(p, m1, m2, g, 0.01, 0.9, 0.999, 0.0, 1);
    EXPECT_NEAR(p["a.b"](0, 0), 0.99f, 1e-6);
    EXPECT_NEAR(p["a.b"](0, 1), 1.01f, 1e-5);
}

TEST(Checkpoint, BitwiseRoundTrip)
{
    const RunConfig c = tiny_config();
    Checkpoint ck;
    ck.params = initial_parameters(c);
    ck.velocity = ck.params.zerosLike();
    ck.velocity["tau.raw"](0, 0) = 0.25f;
    ck.step = 17;
    ck.configHash = config_hash(c);
    ck.modelHash = model_hash(c.model);
    ck.configJson = run_config_json(c);
    std::mt19937_64 rng(4);
    std::stringstream ss;
    ss << rng;
    ck.rngState = ss.str();
    const fs::path a = fs::temp_directory_path() / ("glam_ck_a_" + std::to_string(::getpid()));
    const fs::path b = fs::temp_directory_path() / ("glam_ck_b_" + std::to_string(::getpid()));
    save_checkpoint(a, ck);
    const Checkpoint back = load_checkpoint(a);
    save_checkpoint(b, back);
    EXPECT_EQ(slurp(a), slurp(b));
    EXPECT_TRUE(same_params(ck.params, back.params));
    EXPECT_TRUE(same_params(ck.velocity, back.velocity));
    EXPECT_EQ(back.step, 17u);
    EXPECT_EQ(back.rngState, ck.rngState);
    EXPECT_EQ(back.configHash, ck.configHash);
    fs::remove(a);
    fs::remove(b);
    EXPECT_THROW(load_checkpoint(a), IoError);
}

TEST_F(TinyRun, ZeroStepsReturnsInitialisation)
{
    RunConfig c = tiny_config();
    c.training.steps = 0;
    const auto res = pretrain(manifest_, c);
    EXPECT_TRUE(same_params(res.checkpoint.params, initial_parameters(c)));
    EXPECT_EQ(res.checkpoint.step, 0u);
    EXPECT_TRUE(res.losses.empty());
}

TEST_F(TinyRun, SameSeedSameTraceAndCheckpoint)
{
    const RunConfig c = tiny_config();
    const auto a = pretrain(manifest_, c, {root_ / "a"});
    const auto b = pretrain(manifest_, c, {root_ / "b"});
    ASSERT_EQ(a.losses.size(), 3u);
    EXPECT_EQ(slurp(root_ / "a" / "loss.csv"), slurp(root_ / "b" / "loss.csv"));
    EXPECT_EQ(slurp(root_ / "a" / "checkpoint.bin"), slurp(root_ / "b" / "checkpoint.bin"));
    EXPECT_TRUE(fs::exists(root_ / "a" / "checkpoint_step2.bin"));
    EXPECT_TRUE(same_params(a.checkpoint.params, b.checkpoint.params));
    EXPECT_FALSE(same_params(a.checkpoint.params, initial_parameters(c)));
}

TEST_F(TinyRun, LossCsvHasOneRowPerStep)
{
    RunConfig c = tiny_config();
    c.training.steps = 4;
    pretrain(manifest_, c, {root_ / "csv", false});
    std::ifstream in(root_ / "csv" / "loss.csv");
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "# config " + config_hash(c));
    std::getline(in, line);
    EXPECT_EQ(line, "step,globalMV,globalIT,local,total,tau,lr");
    int rows = 0;
    while (std::getline(in, line)) {
        ++rows;
    }
    EXPECT_EQ(rows, 4);
    EXPECT_FALSE(fs::exists(root_ / "csv" / "checkpoint.bin"));
}

TEST_F(TinyRun, GlaOffKeepsLocalAtZero)
{
    RunConfig c = tiny_config();
    c.model.alignment.gla = false;
    for (const auto& l : pretrain(manifest_, c).losses) {
        EXPECT_EQ(l.local, 0.0f);
        EXPECT_EQ(l.total, l.globalMV + l.globalIT);
    }
}

TEST_F(TinyRun, BatchesDrawOnlyTrainingIds)
{
    std::set<std::string> train, seen;
    for (int i : manifest_.indices(Split::Train)) {
        train.insert(manifest_.entries[std::size_t(i)].sampleId);
    }
    RunConfig c = tiny_config();
    c.training.steps = 6;
    PretrainOptions o;
    o.onBatch = [&seen](int, const std::vector<std::string>& ids) { seen.insert(ids.begin(), ids.end()); };
    pretrain(manifest_, c, o);
    ASSERT_FALSE(seen.empty());
    for (const auto& id : seen) {
        EXPECT_EQ(train.count(id), 1u) << id;
    }
}

TEST_F(TinyRun, PreparedSampleKeepsLabels)
{
    const Sample s = load_sample(manifest_, 0);
    const PreparedSample p = prepare_sample(s, tiny_config().preprocess);
    EXPECT_EQ(p.sampleId, s.sampleId);
    EXPECT_EQ(p.biradsLikeLabel, s.biradsLikeLabel);
    const auto imgs = eval_images(p, tiny_config().preprocess);
    EXPECT_EQ(imgs.cc.rows(), 32);
    EXPECT_NEAR(imgs.mlo.cast<double>().mean(), 0.0, 1e-5);
}
