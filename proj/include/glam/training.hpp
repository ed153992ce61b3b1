#ifndef GLAM_TRAINING_HPP
#define GLAM_TRAINING_HPP

#include "glam/config.hpp"
#include "glam/dataset.hpp"
#include "glam/model.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace glam {

class NonFiniteLoss : public std::runtime_error {
public:
    NonFiniteLoss(const std::string& what, std::vector<std::string> ids)
        : std::runtime_error(what), batchIds(std::move(ids))
    {
    }
    std::vector<std::string> batchIds;
};

/// Class-balanced index stream: pick a class uniformly, then an example of
/// that class uniformly, with replacement.
class BalancedSampler {
public:
    BalancedSampler(const std::vector<int>& labels, int numClasses);

    std::vector<int> next(int batchSize, std::mt19937_64& rng) const;
    [[nodiscard]] int numClasses() const { return static_cast<int>(byClass_.size()); }

private:
    std::vector<std::vector<int>> byClass_;
};

/// lr * 0.5 * (1 + cos(pi * step / steps)).
double cosine_lr(double lr, int step, int steps);

/// SGD with momentum and L2 weight decay folded into the gradient:
/// v = mu v + (g + wd w), w -= lr v.
void sgd_step(ParameterSet<float>& params, ParameterSet<float>& velocity, const ParameterSet<float>& grads, double lr,
              double momentum, double weightDecay);

/// AdamW with bias correction; `t` counts updates from 1.
void adamw_step(ParameterSet<float>& params, ParameterSet<float>& m1, ParameterSet<float>& m2,
                const ParameterSet<float>& grads, double lr, double beta1, double beta2, double weightDecay, int t);

struct Checkpoint {
    ParameterSet<float> params;
    ParameterSet<float> velocity;
    ParameterSet<float> secondMoment;  ///< empty unless the optimizer is adamw
    std::uint64_t step = 0;
    std::string configHash;
    std::string modelHash;
    std::string configJson;
    std::string rngState;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// A training sample held in memory with its pectoral-removed, aligned MLO.
struct PreparedSample {
    std::string sampleId;
    Image cc;
    Image mlo;
    ReportText report;
    int densityClass = 0;
    int biradsLikeLabel = 0;
    Point2 chestPoint, nipplePoint;
    std::vector<RoiGroundTruth> rois;
};

PreparedSample prepare_sample(const Sample& s, const PreprocessConfig& cfg);

/// Builds a model batch. With `rng`, applies random affine per view and text
/// augmentation; without, the evaluation path.
PairBatch make_pair_batch(const std::vector<const PreparedSample*>& samples, const RunConfig& cfg,
                          std::mt19937_64* rng);

/// Evaluation-path images for one sample: resized and standardised, no affine.
ViewPairImages eval_images(const PreparedSample& s, const PreprocessConfig& cfg);

struct PretrainResult {
    Checkpoint checkpoint;
    std::vector<LossBreakdown<float>> losses;
    std::vector<double> lrs;
};

struct PretrainOptions {
    std::filesystem::path outDir;  ///< empty: no files written
    bool writeCheckpoints = true;
    std::function<void(int, const LossBreakdown<float>&)> onStep;
    std::function<void(int, const std::vector<std::string>&)> onBatch;  ///< sample ids of each batch
};

/// Runs the pretraining loop over the manifest's train split.
PretrainResult pretrain(const DatasetManifest& manifest, const RunConfig& cfg, const PretrainOptions& options = {});

/// Fresh parameters for `cfg`, deterministic in cfg.seed.
ParameterSet<float> initial_parameters(const RunConfig& cfg);

std::string loss_csv_header();
std::string loss_csv_row(int step, const LossBreakdown<float>& l, double lr);

}  // namespace glam

#endif  // GLAM_TRAINING_HPP
