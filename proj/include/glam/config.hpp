#ifndef GLAM_CONFIG_HPP
#define GLAM_CONFIG_HPP

#include "glam/model.hpp"
#include "glam/phantom.hpp"
#include "glam/preprocess.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace glam {

struct DatasetConfig {
    PhantomConfig phantom;
    int count = 2000;
};

struct TrainConfig {
    std::string preset = "desk";
    int batchSize = 16;
    int steps = 3000;
    double lr = 1e-3;
    double weightDecay = 1e-4;
    double momentum = 0.9;
    std::string optimizer = "adamw";  ///< sgd | adamw (momentum doubles as beta1)
    int checkpointEvery = 500;
    std::string balanceLabel = "birads";  ///< birads | density | cancerLike
    double synonymProb = 0.3;

    void validate() const;
    /// Full-scale hyperparameters; recorded only, never run.
    static TrainConfig paperPreset();
};

struct ProbeConfig {
    int batchSize = 16;
    int steps = 800;
    double lr = 5e-4;
    double weightDecay = 1e-3;
};

struct EvalConfig {
    ProbeConfig probe;
    ProbeConfig fineTune;
    std::string singleView = "cc";  ///< view used for single-view predictions
    int attnSamples = 200;          ///< test pairs scanned for ROI queries
    std::vector<int> ablationM{16, 64, 256};

    void validate() const;
};

struct RunConfig {
    DatasetConfig data;
    PreprocessConfig preprocess;
    ModelConfig model;
    TrainConfig training;
    EvalConfig eval;
    std::string outDir = "runs/default";
    std::uint64_t seed = 0;

    void validate() const;
};

/// Parses a JSON run config. Missing keys keep their defaults; unknown keys
/// and ill-typed values throw ConfigError.
RunConfig parse_run_config(const std::string& jsonText);
RunConfig load_run_config(const std::filesystem::path& path);
std::string run_config_json(const RunConfig& cfg);

std::string sha256_hex(const std::string& bytes);

/// Hash of the canonical JSON of the whole config.
std::string config_hash(const RunConfig& cfg);
/// Hash of the data-generation inputs only (phantom block and seed).
std::string generator_hash(const RunConfig& cfg);
/// Hash of the encoder and alignment architecture.
std::string model_hash(const ModelConfig& cfg);

}  // namespace glam

#endif  // GLAM_CONFIG_HPP
