#ifndef GLAM_EVALUATION_HPP
#define GLAM_EVALUATION_HPP

#include "glam/training.hpp"

#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace glam {

/// Class prompts for zero-shot classification, taken from the report table.
struct PromptSet {
    std::vector<std::vector<std::string>> classes;
};

PromptSet prompt_set(Task task);

/// Throws ConfigError on an empty class or a prompt containing unknown words.
void check_prompts(const PromptSet& prompts, const Tokenizer& tokenizer = Tokenizer::standard());

/// (C, d) class embeddings: mean text embedding of each class's distinct
/// prompts, L2-normalised.
Matrix<float> class_embeddings(const ParameterSet<float>& params, const ModelConfig& cfg, const PromptSet& prompts);

/// Softmax over classes of cos(image, class) / tau. Rows are images.
Matrix<double> zero_shot_probs(const Matrix<float>& imageEmb, const Matrix<float>& classEmb, double tau);

double temperature_value(const ParameterSet<float>& params);

/// CLS embeddings (N, d) of preprocessed images through the encoder for `view`.
Matrix<float> image_features(const ParameterSet<float>& params, const ModelConfig& cfg,
                             const std::vector<Image>& images, View view);

/// Elementwise mean of two probability tables.
Matrix<double> multi_view_predict(const Matrix<double>& probsCC, const Matrix<double>& probsMLO);

struct Metrics {
    double bACC = 0;  ///< percent
    double AUC = 0;   ///< percent
};

/// Ranking AUC of `scores` with `positive` flags; ties count one half. Percent.
double binary_auc(const std::vector<double>& scores, const std::vector<bool>& positive);

/// bACC = mean recall over classes present in `labels`; AUC = macro one-vs-rest.
Metrics compute_metrics(const Matrix<double>& probs, const std::vector<int>& labels);

enum class Setting { ZeroShot, LinearProbe, FineTune };
enum class ViewMode { Single, Multi };

Setting parse_setting(const std::string& name);
const char* setting_name(Setting s);
ViewMode parse_view_mode(const std::string& name);
const char* view_mode_name(ViewMode v);

struct EvalReport {
    Task task = Task::Birads;
    Setting setting = Setting::ZeroShot;
    double fraction = 1.0;
    ViewMode viewMode = ViewMode::Single;
    double bACC = 0;
    double AUC = 0;
    int nTest = 0;
    std::string configHash;
};

std::string eval_csv_header();
std::string eval_csv_row(const EvalReport& r);

/// Prepared train and test splits, loaded once per evaluation session.
struct EvalData {
    std::vector<PreparedSample> train;
    std::vector<PreparedSample> test;
};

EvalData load_eval_data(const DatasetManifest& manifest, const RunConfig& cfg);

/// Per-class seeded subsample keeping max(1, round(fraction * n_c)) of each class.
std::vector<int> stratified_subsample(const std::vector<int>& labels, int numClasses, double fraction,
                                      std::mt19937_64& rng);

struct LinearHead {
    Matrix<float> w;  ///< (d, C)
    Matrix<float> b;  ///< (1, C)
};

LinearHead zero_head(int dim, int numClasses);

/// Trains a linear classifier on fixed features with balanced sampling.
LinearHead train_linear_head(const Matrix<float>& features, const std::vector<int>& labels, int numClasses,
                             const ProbeConfig& cfg, std::mt19937_64& rng);

Matrix<double> head_probs(const LinearHead& head, const Matrix<float>& features);

EvalReport zero_shot_eval(const ParameterSet<float>& params, const RunConfig& cfg, const EvalData& data, Task task,
                          ViewMode mode);

EvalReport linear_probe(const ParameterSet<float>& params, const RunConfig& cfg, const EvalData& data, Task task,
                        double fraction, ViewMode mode);

EvalReport fine_tune(const ParameterSet<float>& params, const RunConfig& cfg, const EvalData& data, Task task,
                     ViewMode mode);

/// Single-view evaluation uses `cfg.eval.singleView`; multi-view averages the
/// per-view probabilities.
EvalReport evaluate(const ParameterSet<float>& params, const RunConfig& cfg, const EvalData& data, Task task,
                    Setting setting, double fraction, ViewMode mode);

// Cross-view attention maps.

struct AttentionQuery {
    View view = View::CC;  ///< view the query patch lives in
    int row = 0;
    int col = 0;
};

struct AttentionMap {
    std::string sampleId;
    AttentionQuery query;
    std::vector<double> weights;  ///< head-averaged, over the rows of column `query.col` in the other view
    int argmaxRow = 0;
    int groundTruthRow = -1;     ///< super-patch row of the ROI in the other view, -1 if unknown
    int groundTruthColumn = -1;  ///< super-patch column of the ROI in the other view
};

/// Super-patch index of raw pixel coordinate `raw` along an axis of length
/// `rawSize` after resizing to the encoder input.
int super_patch_index(double raw, int rawSize, const ModelConfig& cfg, bool rows);

/// Grids (M, d) of super-patches for both views of a sample.
std::pair<Matrix<float>, Matrix<float>> super_patch_grids(const ParameterSet<float>& params, const ModelConfig& cfg,
                                                          const ViewPairImages& images);

std::vector<AttentionMap> attention_maps(const ParameterSet<float>& params, const RunConfig& cfg,
                                         const PreparedSample& sample, const std::vector<AttentionQuery>& queries);

/// One query per ROI per direction at the super-patch holding the ROI centre,
/// with the ROI row in the other view as ground truth.
std::vector<AttentionMap> roi_attention_maps(const ParameterSet<float>& params, const RunConfig& cfg,
                                             const PreparedSample& sample);

struct LocalizationStats {
    int queries = 0;
    int hits = 0;
    double hitRate = 0;
    double chance = 0;  ///< 3 / sqrt(M)
    std::vector<int> argmaxHistogram;
    double chiSquare = 0;
    double pValue = 1;

    [[nodiscard]] bool beatsChance(double factor = 3.0) const { return hitRate >= factor * chance; }
    [[nodiscard]] bool uniformRejected(double alpha = 0.01) const { return pValue < alpha; }
};

/// Hit = argmax row within one super-patch of the ground-truth row.
LocalizationStats localization(const std::vector<AttentionMap>& maps, int m);

LocalizationStats evaluate_localization(const ParameterSet<float>& params, const RunConfig& cfg,
                                        const std::vector<PreparedSample>& samples);

/// Upper tail of the chi-square distribution.
double chi_square_sf(double x, int dof);

/// Side-by-side RGB overlay: query view with the query box, other view with
/// per-row heat in the query column and the argmax box.
void write_attention_overlay(const std::filesystem::path& path, const ViewPairImages& images, const AttentionMap& map,
                             const ModelConfig& cfg);

/// Inclusive pixel box of super-patch (i, j) in the encoder input.
Box super_patch_box(int i, int j, const ModelConfig& cfg);

// Ablation.

struct AblationRow {
    bool gla = true, spn = true, saa = true, apSampling = true;
    int m = 256;
    EvalReport zeroShot, linearProbe, fineTune;
    double localizationHitRate = 0;
};

/// Rows mirroring the ablation table: GLA off, SPN off, SAA off, AP sampling
/// off (each at the base M), then the full model at every M in the grid.
std::vector<AblationRow> ablation_grid(const RunConfig& base);

std::vector<AblationRow> run_ablation(const DatasetManifest& manifest, const RunConfig& base,
                                      const std::filesystem::path& outDir);

std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace glam

#endif  // GLAM_EVALUATION_HPP
