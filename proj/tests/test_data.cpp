#include "glam/config.hpp"
#include "glam/dataset.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <unistd.h>

using namespace glam;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name)
{
    const fs::path d = fs::temp_directory_path() / ("glam_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(d);
    return d;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST(Config, DefaultsRoundTrip)
{
    RunConfig c;
    c.seed = 42;
    c.model.alignment.literalEq4 = true;
    c.training.optimizer = "sgd";
    const RunConfig back = parse_run_config(run_config_json(c));
    EXPECT_EQ(run_config_json(back), run_config_json(c));
    EXPECT_EQ(config_hash(back), config_hash(c));
}

TEST(Config, EmptyObjectKeepsDefaults)
{
    EXPECT_EQ(run_config_json(parse_run_config("{}")), run_config_json(RunConfig{}));
}

TEST(Config, UnknownKeysRejected)
{
    EXPECT_THROW(parse_run_config(R"({"bogus": 1})"), ConfigError);
    EXPECT_THROW(parse_run_config(R"({"alignment": {"mm": 16}})"), ConfigError);
}

TEST(Config, IllTypedValuesRejected)
{
    EXPECT_THROW(parse_run_config(R"({"alignment": {"m": "sixteen"}})"), ConfigError);
    EXPECT_THROW(parse_run_config(R"({"training": {"steps": 1.5}})"), ConfigError);
    EXPECT_THROW(parse_run_config("[1, 2"), ConfigError);
}

TEST(Config, InvalidValuesRejected)
{
    EXPECT_THROW(parse_run_config(R"({"alignment": {"m": 15}})"), ConfigError);
    EXPECT_THROW(parse_run_config(R"({"training": {"optimizer": "rmsprop"}})"), ConfigError);
    EXPECT_THROW(parse_run_config(R"({"phantom": {"mloAngleMin": 10}})"), ConfigError);
}

TEST(Config, PaperPresetRecordsFullScale)
{
    const TrainConfig p = TrainConfig::paperPreset();
    EXPECT_EQ(p.batchSize, 144);
    EXPECT_EQ(p.steps, 40000);
    EXPECT_DOUBLE_EQ(p.lr, 4e-5);
    EXPECT_DOUBLE_EQ(p.weightDecay, 0.2);
    const TrainConfig d;
    EXPECT_EQ(d.batchSize, 16);
    EXPECT_EQ(d.steps, 3000);
    EXPECT_DOUBLE_EQ(d.lr, 1e-3);
    EXPECT_DOUBLE_EQ(d.weightDecay, 1e-4);
}

TEST(Config, HashesSeparateConcerns)
{
    RunConfig a, b;
    b.training.steps = 7;
    EXPECT_NE(config_hash(a), config_hash(b));
    EXPECT_EQ(generator_hash(a), generator_hash(b));
    EXPECT_EQ(model_hash(a.model), model_hash(b.model));
    b.model.alignment.m = 64;
    EXPECT_NE(model_hash(a.model), model_hash(b.model));
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Splits, ExactCounts)
{
    for (int n : {10, 37, 2000}) {
        std::vector<std::string> ids;
        for (int i = 0; i < n; ++i) {
            ids.push_back("s" + std::to_string(i));
        }
        const auto s = assign_splits(ids);
        const auto count = [&s](Split x) { return std::count(s.begin(), s.end(), x); };
        EXPECT_EQ(count(Split::Train), n * 7 / 10);
        EXPECT_EQ(count(Split::Val), n / 10);
        EXPECT_EQ(count(Split::Test), n - n * 7 / 10 - n / 10);
    }
}

class SmallDataset : public ::testing::Test {
protected:
    static void SetUpTestSuite()
    {
        cfg_.data.count = 10;
        cfg_.seed = 3;
        dir_ = temp_dir("data");
        manifest_ = build_dataset(cfg_, dir_);
    }
    static void TearDownTestSuite() { fs::remove_all(dir_); }

    static RunConfig cfg_;
    static fs::path dir_;
    static DatasetManifest manifest_;
};

RunConfig SmallDataset::cfg_;
fs::path SmallDataset::dir_;
DatasetManifest SmallDataset::manifest_;

TEST_F(SmallDataset, SplitSizesAndDisjointIds)
{
    ASSERT_EQ(manifest_.entries.size(), 10u);
    EXPECT_EQ(manifest_.indices(Split::Train).size(), 7u);
    EXPECT_EQ(manifest_.indices(Split::Val).size(), 1u);
    EXPECT_EQ(manifest_.indices(Split::Test).size(), 2u);
    std::set<std::string> train, test;
    for (int i : manifest_.indices(Split::Train)) {
        train.insert(manifest_.entries[std::size_t(i)].sampleId);
    }
    for (int i : manifest_.indices(Split::Test)) {
        EXPECT_EQ(train.count(manifest_.entries[std::size_t(i)].sampleId), 0u);
    }
}

TEST_F(SmallDataset, RebuildIsBitIdentical)
{
    const fs::path other = temp_dir("data2");
    build_dataset(cfg_, other);
    EXPECT_EQ(slurp(dir_ / "manifest.json"), slurp(other / "manifest.json"));
    for (const auto& e : manifest_.entries) {
        EXPECT_EQ(slurp(dir_ / e.pathCC), slurp(other / e.pathCC));
        EXPECT_EQ(slurp(dir_ / e.pathMLO), slurp(other / e.pathMLO));
    }
    fs::remove_all(other);
}

TEST_F(SmallDataset, LoadRoundTripsManifestAndSamples)
{
    const DatasetManifest m = load_manifest(dir_ / "manifest.json");
    EXPECT_EQ(manifest_json(m), manifest_json(manifest_));
    const Sample s = load_sample(m, 0);
    EXPECT_EQ(s.rawCC.rows(), cfg_.data.phantom.ny);
    EXPECT_EQ(s.rawCC.cols(), cfg_.data.phantom.nx);
    EXPECT_FALSE(s.report.empty());
    EXPECT_EQ(task_label(s, Task::Birads), m.entries[0].biradsLikeLabel);
}

TEST_F(SmallDataset, GroundTruthWithinImage)
{
    for (const auto& e : manifest_.entries) {
        for (const auto& gt : e.roiGroundTruth) {
            EXPECT_GE(gt.ccColumn, 0);
            EXPECT_LT(gt.ccColumn, cfg_.data.phantom.nx);
            EXPECT_GE(gt.mloColumn, 0);
            EXPECT_LT(gt.mloColumn, cfg_.data.phantom.nx);
        }
    }
}

TEST(Dataset, FailedBuildLeavesNoDirectory)
{
    RunConfig c;
    c.data.count = 2;
    const fs::path blocker = temp_dir("blocker");
    {
        std::ofstream(blocker) << "x";
    }
    EXPECT_ANY_THROW(build_dataset(c, blocker / "sub"));
    fs::remove_all(blocker);
}

TEST(Tasks, ParseAndClassCounts)
{
    EXPECT_EQ(parse_task("birads"), Task::Birads);
    EXPECT_EQ(class_count(Task::Birads), 3);
    EXPECT_EQ(class_count(Task::Density), 4);
    EXPECT_EQ(class_count(Task::CancerLike), 2);
    EXPECT_THROW(parse_task("nope"), ConfigError);
}
