#ifndef GLAM_DATASET_HPP
#define GLAM_DATASET_HPP

#include "glam/config.hpp"
#include "glam/phantom.hpp"
#include "glam/preprocess.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace glam {

enum class Split { Train, Val, Test };

const char* split_name(Split s);

struct ManifestEntry {
    std::string sampleId;
    std::string pathCC, pathMLO, reportPath, groundTruthPath;  ///< relative to the dataset root
    int densityClass = 0;
    int biradsLikeLabel = 0;
    Split split = Split::Train;
    double mloAngleDeg = 45.0;
    Point2 chestPoint, nipplePoint;
    std::vector<RoiGroundTruth> roiGroundTruth;
};

struct DatasetManifest {
    std::filesystem::path root;
    std::string generatorConfigHash;
    std::vector<ManifestEntry> entries;

    [[nodiscard]] std::vector<int> indices(Split s) const;
};

/// Per-sample seed derived from the run seed.
std::uint64_t sample_seed(std::uint64_t seed, int index);

/// Exact 70/10/20 split: ids sorted by SHA-256, first floor(0.7 N) train,
/// next floor(0.1 N) val, the rest test.
std::vector<Split> assign_splits(const std::vector<std::string>& sampleIds);

/// Writes images, reports, ground-truth sidecars and manifest.json under
/// `dir`. On any failure the directory is removed and the error rethrown.
DatasetManifest build_dataset(const RunConfig& cfg, const std::filesystem::path& dir);

DatasetManifest load_manifest(const std::filesystem::path& manifestPath);

std::string manifest_json(const DatasetManifest& m);

/// One loaded sample: raw images, report text, labels and geometry.
struct Sample {
    std::string sampleId;
    Image rawCC, rawMLO;
    std::string report;
    int densityClass = 0;
    int biradsLikeLabel = 0;
    Point2 chestPoint, nipplePoint;
    std::vector<RoiGroundTruth> rois;
};

Sample load_sample(const DatasetManifest& m, int index);
std::vector<Sample> load_samples(const DatasetManifest& m, const std::vector<int>& indices);

enum class Task { Birads, Density, CancerLike };

Task parse_task(const std::string& name);
const char* task_name(Task t);
int class_count(Task t);
int task_label(const Sample& s, Task t);
int task_label(const ManifestEntry& e, Task t);

}  // namespace glam

#endif  // GLAM_DATASET_HPP
