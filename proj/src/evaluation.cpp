#include "glam/evaluation.hpp"

#include "glam/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

namespace glam {

PromptSet prompt_set(Task task)
{
    const TemplateTable& t = template_table();
    PromptSet p;
    switch (task) {
    case Task::Density:
        for (const auto& cls : t.density) {
            p.classes.emplace_back(cls.begin(), cls.end());
        }
        break;
    case Task::Birads:
        p.classes = {t.noFinding, t.massFinding, t.calcFinding};
        break;
    case Task::CancerLike: {
        std::vector<std::string> finding(t.massFinding);
        finding.insert(finding.end(), t.calcFinding.begin(), t.calcFinding.end());
        p.classes = {t.noFinding, finding};
        break;
    }
    }
    return p;
}

void check_prompts(const PromptSet& prompts, const Tokenizer& tokenizer)
{
    if (prompts.classes.empty()) {
        throw ConfigError("prompts: no classes");
    }
    for (const auto& cls : prompts.classes) {
        if (cls.empty()) {
            throw ConfigError("prompts: class without prompts");
        }
        for (const auto& s : cls) {
            if (tokenizer.unknownCount(s) > 0) {
                throw ConfigError("prompts: unknown word in \"" + s + "\"");
            }
        }
    }
}

Matrix<float> class_embeddings(const ParameterSet<float>& params, const ModelConfig& cfg, const PromptSet& prompts)
{
    check_prompts(prompts);
    const auto& tok = Tokenizer::standard();
    Matrix<float> out(static_cast<Index>(prompts.classes.size()), cfg.vision.dim);
    for (std::size_t c = 0; c < prompts.classes.size(); ++c) {
        const std::set<std::string> distinct(prompts.classes[c].begin(), prompts.classes[c].end());
        std::vector<std::vector<int>> seqs;
        for (const auto& s : distinct) {
            seqs.push_back(tok.encode(s, cfg.text.maxLength));
        }
        Graph<float> g(false);
        Binder<float> bind(g, params);
        const Matrix<float> emb = text_forward(bind, cfg.text, "text", seqs).value();
        RowVector<float> mean = emb.colwise().mean();
        out.row(static_cast<Index>(c)) = mean / std::max(mean.norm(), 1e-8f);
    }
    return out;
}

Matrix<double> zero_shot_probs(const Matrix<float>& imageEmb, const Matrix<float>& classEmb, double tau)
{
    if (imageEmb.cols() != classEmb.cols()) {
        throw ContractError("zero_shot: embedding dimension mismatch");
    }
    Matrix<double> img = imageEmb.cast<double>();
    Matrix<double> cls = classEmb.cast<double>();
    for (Index r = 0; r < img.rows(); ++r) {
        img.row(r) /= std::max(img.row(r).norm(), 1e-8);
    }
    for (Index r = 0; r < cls.rows(); ++r) {
        cls.row(r) /= std::max(cls.row(r).norm(), 1e-8);
    }
    Matrix<double> logits = img * cls.transpose() / tau;
    softmax_rows_inplace(logits);
    return logits;
}

double temperature_value(const ParameterSet<float>& params)
{
    const double raw = params["tau.raw"](0, 0);
    return raw > 30.0 ? raw : std::log1p(std::exp(raw));
}

Matrix<float> image_features(const ParameterSet<float>& params, const ModelConfig& cfg,
                             const std::vector<Image>& images, View view)
{
    const std::string prefix = view == View::MLO ? cfg.mloPrefix() : "vision";
    Matrix<float> out(static_cast<Index>(images.size()), cfg.vision.dim);
    constexpr std::size_t kChunk = 32;
    for (std::size_t start = 0; start < images.size(); start += kChunk) {
        const std::size_t n = std::min(kChunk, images.size() - start);
        Graph<float> g(false);
        Binder<float> bind(g, params);
        auto vis = vision_forward(bind, cfg.vision, prefix, std::span<const Image>(images.data() + start, n));
        out.middleRows(static_cast<Index>(start), static_cast<Index>(n)) = vis.cls.value();
    }
    return out;
}

Matrix<double> multi_view_predict(const Matrix<double>& probsCC, const Matrix<double>& probsMLO)
{
    if (probsCC.rows() != probsMLO.rows() || probsCC.cols() != probsMLO.cols()) {
        throw ContractError("multi_view_predict: probability tables differ in shape");
    }
    return (probsCC + probsMLO) * 0.5;
}

double binary_auc(const std::vector<double>& scores, const std::vector<bool>& positive)
{
    if (scores.size() != positive.size()) {
        throw ContractError("auc: score/label count mismatch");
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Twice the Mann-Whitney count: 2 per ordered pair, 1 per tie.
    long long twice = 0, negBelow = 0, nPos = 0, nNeg = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        long long pos = 0, neg = 0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            positive[order[j]] ? ++pos : ++neg;
            ++j;
        }
        twice += pos * (2 * negBelow + neg);
        negBelow += neg;
        nPos += pos;
        nNeg += neg;
        i = j;
    }
    if (nPos == 0 || nNeg == 0) {
        throw ConfigError("auc: undefined with a single class");
    }
    return 100.0 * double(twice) / double(2 * nPos * nNeg);
}

Metrics compute_metrics(const Matrix<double>& probs, const std::vector<int>& labels)
{
    if (static_cast<Index>(labels.size()) != probs.rows()) {
        throw ContractError("compute_metrics: prediction/label count mismatch");
    }
    const Index c = probs.cols();
    std::vector<int> count(static_cast<std::size_t>(c), 0), correct(static_cast<std::size_t>(c), 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= c) {
            throw ContractError("compute_metrics: label out of range");
        }
        Index arg = 0;
        probs.row(static_cast<Index>(i)).maxCoeff(&arg);
        ++count[static_cast<std::size_t>(labels[i])];
        if (arg == labels[i]) {
            ++correct[static_cast<std::size_t>(labels[i])];
        }
    }
    int present = 0;
    double recall = 0, auc = 0;
    for (Index k = 0; k < c; ++k) {
        if (count[static_cast<std::size_t>(k)] == 0) {
            continue;
        }
        ++present;
        recall += double(correct[static_cast<std::size_t>(k)]) / double(count[static_cast<std::size_t>(k)]);
    }
    if (present < 2) {
        throw ConfigError("compute_metrics: AUC undefined with a single class in the labels");
    }
    std::vector<double> scores(labels.size());
    std::vector<bool> pos(labels.size());
    for (Index k = 0; k < c; ++k) {
        if (count[static_cast<std::size_t>(k)] == 0) {
            continue;
        }
        for (std::size_t i = 0; i < labels.size(); ++i) {
            scores[i] = probs(static_cast<Index>(i), k);
            pos[i] = labels[i] == k;
        }
        auc += binary_auc(scores, pos);
    }
    return {100.0 * recall / present, auc / present};
}

Setting parse_setting(const std::string& name)
{
    if (name == "zeroShot" || name == "zero-shot") {
        return Setting::ZeroShot;
    }
    if (name == "linearProbe" || name == "linear-probe") {
        return Setting::LinearProbe;
    }
    if (name == "fineTune" || name == "fine-tune") {
        return Setting::FineTune;
    }
    throw ConfigError("unknown setting " + name);
}

const char* setting_name(Setting s)
{
    switch (s) {
    case Setting::ZeroShot:
        return "zeroShot";
    case Setting::LinearProbe:
        return "linearProbe";
    case Setting::FineTune:
        return "fineTune";
    }
    return "?";
}

ViewMode parse_view_mode(const std::string& name)
{
    if (name == "single") {
        return ViewMode::Single;
    }
    if (name == "multi") {
        return ViewMode::Multi;
    }
    throw ConfigError("unknown view mode " + name);
}

const char* view_mode_name(ViewMode v) { return v == ViewMode::Single ? "single" : "multi"; }

std::string eval_csv_header() { return "task,setting,fraction,viewMode,bACC,AUC,nTest,configHash"; }

std::string eval_csv_row(const EvalReport& r)
{
    std::ostringstream os;
    os << task_name(r.task) << ',' << setting_name(r.setting) << ',' << r.fraction << ',' << view_mode_name(r.viewMode)
       << ',' << std::fixed << std::setprecision(4) << r.bACC << ',' << r.AUC << ',' << r.nTest << ','
       << r.configHash;
    return os.str();
}

EvalData load_eval_data(const DatasetManifest& manifest, const RunConfig& cfg)
{
    EvalData d;
    for (int idx : manifest.indices(Split::Train)) {
        d.train.push_back(prepare_sample(load_sample(manifest, idx), cfg.preprocess));
    }
    for (int idx : manifest.indices(Split::Test)) {
        d.test.push_back(prepare_sample(load_sample(manifest, idx), cfg.preprocess));
    }
    return d;
}

std::vector<int> stratified_subsample(const std::vector<int>& labels, int numClasses, double fraction,
                                      std::mt19937_64& rng)
{
    if (!(fraction > 0.0) || fraction > 1.0) {
        throw ConfigError("fraction must lie in (0, 1]");
    }
    std::vector<std::vector<int>> byClass(static_cast<std::size_t>(numClasses));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        byClass.at(static_cast<std::size_t>(labels[i])).push_back(static_cast<int>(i));
    }
    std::vector<int> out;
    for (std::size_t c = 0; c < byClass.size(); ++c) {
        auto& members = byClass[c];
        if (members.empty()) {
            throw ConfigError("stratified_subsample: class " + std::to_string(c) + " absent");
        }
        std::shuffle(members.begin(), members.end(), rng);
        const auto keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(fraction * members.size())));
        out.insert(out.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(keep));
    }
    std::sort(out.begin(), out.end());
    return out;
}

LinearHead zero_head(int dim, int numClasses)
{
    return {Matrix<float>::Zero(dim, numClasses), Matrix<float>::Zero(1, numClasses)};
}

namespace {

ParameterSet<float> head_params(const LinearHead& h)
{
    ParameterSet<float> p;
    p.add("head.w", h.w);
    p.add("head.b", h.b);
    return p;
}

Var<float> head_logits(Binder<float>& bind, const Var<float>& features)
{
    return matmul(features, bind("head.w")) + bind("head.b");
}

/// Training examples for a single- or multi-view downstream task: one per
/// (sample, view) pair.
struct ViewExamples {
    std::vector<Image> images;
    std::vector<View> views;
    std::vector<int> labels;
    std::vector<int> sampleOf;
};

std::vector<View> mode_views(const RunConfig& cfg, ViewMode mode)
{
    if (mode == ViewMode::Multi) {
        return {View::CC, View::MLO};
    }
    if (cfg.eval.singleView == "mlo") {
        return {View::MLO};
    }
    return {View::CC};
}

ViewExamples view_examples(const std::vector<PreparedSample>& samples, const std::vector<int>& pick,
                           const RunConfig& cfg, Task task, const std::vector<View>& views)
{
    ViewExamples ex;
    for (int i : pick) {
        const PreparedSample& s = samples[static_cast<std::size_t>(i)];
        const ViewPairImages im = eval_images(s, cfg.preprocess);
        const int label = task == Task::Density ? s.densityClass
                          : task == Task::Birads ? s.biradsLikeLabel
                                                 : (s.biradsLikeLabel > 0 ? 1 : 0);
        for (View v : views) {
            ex.images.push_back(v == View::CC ? im.cc : im.mlo);
            ex.views.push_back(v);
            ex.labels.push_back(label);
            ex.sampleOf.push_back(i);
        }
    }
    return ex;
}

int prepared_label(const PreparedSample& s, Task task)
{
    switch (task) {
    case Task::Density:
        return s.densityClass;
    case Task::Birads:
        return s.biradsLikeLabel;
    case Task::CancerLike:
        return s.biradsLikeLabel > 0 ? 1 : 0;
    }
    return 0;
}

std::vector<int> all_indices(std::size_t n)
{
    std::vector<int> v(n);
    std::iota(v.begin(), v.end(), 0);
    return v;
}

Matrix<float> example_features(const ParameterSet<float>& params, const ModelConfig& cfg, const ViewExamples& ex)
{
    Matrix<float> out(static_cast<Index>(ex.images.size()), cfg.vision.dim);
    for (View v : {View::CC, View::MLO}) {
        std::vector<Image> imgs;
        std::vector<Index> rows;
        for (std::size_t i = 0; i < ex.images.size(); ++i) {
            if (ex.views[i] == v) {
                imgs.push_back(ex.images[i]);
                rows.push_back(static_cast<Index>(i));
            }
        }
        if (imgs.empty()) {
            continue;
        }
        const Matrix<float> f = image_features(params, cfg, imgs, v);
        for (std::size_t k = 0; k < rows.size(); ++k) {
            out.row(rows[k]) = f.row(static_cast<Index>(k));
        }
    }
    return out;
}

/// Averages example probabilities over the views of each test sample.
Matrix<double> average_over_views(const Matrix<double>& probs, const ViewExamples& ex, std::size_t nSamples,
                                  const std::vector<View>& views)
{
    if (views.size() == 1) {
        return probs;
    }
    Matrix<double> cc(static_cast<Index>(nSamples), probs.cols()), mlo(static_cast<Index>(nSamples), probs.cols());
    for (std::size_t i = 0; i < ex.views.size(); ++i) {
        (ex.views[i] == View::CC ? cc : mlo).row(ex.sampleOf[i]) = probs.row(static_cast<Index>(i));
    }
    return multi_view_predict(cc, mlo);
}

std::vector<int> test_labels(const EvalData& data, Task task)
{
    std::vector<int> labels;
    for (const auto& s : data.test) {
        labels.push_back(prepared_label(s, task));
    }
    return labels;
}

}  // namespace

LinearHead train_linear_head(const Matrix<float>& features, const std::vector<int>& labels, int numClasses,
                             const ProbeConfig& cfg, std::mt19937_64& rng)
{
    const BalancedSampler sampler(labels, numClasses);
    ParameterSet<float> p = head_params(zero_head(static_cast<int>(features.cols()), numClasses));
    ParameterSet<float> vel = p.zerosLike();
    for (int step = 0; step < cfg.steps; ++step) {
        const std::vector<int> pick = sampler.next(cfg.batchSize, rng);
        Matrix<float> x(static_cast<Index>(pick.size()), features.cols());
        std::vector<int> y;
        for (std::size_t k = 0; k < pick.size(); ++k) {
            x.row(static_cast<Index>(k)) = features.row(pick[k]);
            y.push_back(labels[static_cast<std::size_t>(pick[k])]);
        }
        Graph<float> g;
        Binder<float> bind(g, p);
        Var<float> loss = cross_entropy(head_logits(bind, g.input(x)), y);
        g.backward(loss);
        sgd_step(p, vel, bind.gradients(), cosine_lr(cfg.lr, step, cfg.steps), 0.9, cfg.weightDecay);
    }
    return {p["head.w"], p["head.b"]};
}

Matrix<double> head_probs(const LinearHead& head, const Matrix<float>& features)
{
    Matrix<double> logits = (features * head.w).cast<double>();
    logits.rowwise() += head.b.cast<double>().row(0);
    softmax_rows_inplace(logits);
    return logits;
}

EvalReport zero_shot_eval(const ParameterSet<float>& params, const RunConfig& cfg, const EvalData& data, Task task,
                          ViewMode mode)
{
    const Matrix<float> classes = class_embeddings(params, cfg.model, prompt_set(task));
    const double tau = temperature_value(params);
    const auto views = mode_views(cfg, mode);
    const ViewExamples ex = view_examples(data.test, all_indices(data.test.size()), cfg, task, views);
    const Matrix<double> probs = average_over_views(
        zero_shot_probs(example_features(params, cfg.model, ex), classes, tau), ex, data.test.size(), views);
    const Metrics m = compute_metrics(probs, test_labels(data, task));
    return {task, Setting::ZeroShot, 1.0, mode, m.bACC, m.AUC, static_cast<int>(data.test.size()), ""};
}

EvalReport linear_probe(const ParameterSet<float>& params, const RunConfig& cfg, const EvalData& data, Task task,
                        double fraction, ViewMode mode)
{
    std::mt19937_64 rng(cfg.seed ^ 0x1b873593ull);
    std::vector<int> trainLabels;
    for (const auto& s : data.train) {
        trainLabels.push_back(prepared_label(s, task));
    }
    const std::vector<int> pick = stratified_subsample(trainLabels, class_count(task), fraction, rng);
    const auto views = mode_views(cfg, mode);
    const ViewExamples tr = view_examples(data.train, pick, cfg, task, views);
    const LinearHead head =
        train_linear_head(example_features(params, cfg.model, tr), tr.labels, class_count(task), cfg.eval.probe, rng);
    const ViewExamples te = view_examples(data.test, all_indices(data.test.size()), cfg, task, views);
    const Matrix<double> probs =
        average_over_views(head_probs(head, example_features(params, cfg.model, te)), te, data.test.size(), views);
    const Metrics m = compute_metrics(probs, test_labels(data, task));
    return {task, Setting::LinearProbe, fraction, mode, m.bACC, m.AUC, static_cast<int>(data.test.size()), ""};
}

EvalReport fine_tune(const ParameterSet<float>& params, const RunConfig& cfg, const EvalData& data, Task task,
                     ViewMode mode)
{
    std::mt19937_64 rng(cfg.seed ^ 0x85ebca6bull);
    const auto views = mode_views(cfg, mode);
    const ViewExamples tr = view_examples(data.train, all_indices(data.train.size()), cfg, task, views);
    const int classes = class_count(task);
    const BalancedSampler sampler(tr.labels, classes);

    ParameterSet<float> p = params;
    const LinearHead init = zero_head(cfg.model.vision.dim, classes);
    p.add("head.w", init.w);
    p.add("head.b", init.b);
    ParameterSet<float> vel = p.zerosLike();
    const ProbeConfig& fc = cfg.eval.fineTune;
    for (int step = 0; step < fc.steps; ++step) {
        const std::vector<int> pick = sampler.next(fc.batchSize, rng);
        Graph<float> g;
        Binder<float> bind(g, p);
        Var<float> feats;
        std::vector<int> y;
        for (View v : views) {
            std::vector<Image> imgs;
            for (int k : pick) {
                if (tr.views[static_cast<std::size_t>(k)] == v) {
                    imgs.push_back(tr.images[static_cast<std::size_t>(k)]);
                    y.push_back(tr.labels[static_cast<std::size_t>(k)]);
                }
            }
            if (imgs.empty()) {
                continue;
            }
            const std::string prefix = v == View::MLO ? cfg.model.mloPrefix() : "vision";
            Var<float> cls = vision_forward(bind, cfg.model.vision, prefix, std::span<const Image>(imgs)).cls;
            feats = feats.valid() ? concat_rows(feats, cls) : cls;
        }
        Var<float> loss = cross_entropy(head_logits(bind, feats), y);
        g.backward(loss);
        sgd_step(p, vel, bind.gradients(), cosine_lr(fc.lr, step, fc.steps), 0.9, fc.weightDecay);
    }
    const LinearHead head{p["head.w"], p["head.b"]};
    const ViewExamples te = view_examples(data.test, all_indices(data.test.size()), cfg, task, views);
    const Matrix<double> probs =
        average_over_views(head_probs(head, example_features(p, cfg.model, te)), te, data.test.size(), views);
    const Metrics m = compute_metrics(probs, test_labels(data, task));
    return {task, Setting::FineTune, 1.0, mode, m.bACC, m.AUC, static_cast<int>(data.test.size()), ""};
}

EvalReport evaluate(const ParameterSet<float>& params, const RunConfig& cfg, const EvalData& data, Task task,
                    Setting setting, double fraction, ViewMode mode)
{
    EvalReport r;
    switch (setting) {
    case Setting::ZeroShot:
        if (fraction != 1.0) {
            throw ConfigError("fraction applies to linear probing only");
        }
        r = zero_shot_eval(params, cfg, data, task, mode);
        break;
    case Setting::LinearProbe:
        if (fraction != 0.01 && fraction != 0.1 && fraction != 1.0) {
            throw ConfigError("fraction must be 0.01, 0.1 or 1.0");
        }
        r = linear_probe(params, cfg, data, task, fraction, mode);
        break;
    case Setting::FineTune:
        if (fraction != 1.0) {
            throw ConfigError("fraction applies to linear probing only");
        }
        r = fine_tune(params, cfg, data, task, mode);
        break;
    }
    r.configHash = config_hash(cfg);
    return r;
}

int super_patch_index(double raw, int rawSize, const ModelConfig& cfg, bool rows)
{
    const int size = rows ? cfg.vision.imageHeight : cfg.vision.imageWidth;
    const int grid = rows ? cfg.vision.gridRows() : cfg.vision.gridCols();
    const double centre = (raw + 0.5) * double(size) / double(rawSize);
    const int patch = std::clamp(static_cast<int>(std::floor(centre / cfg.vision.patchSize)), 0, grid - 1);
    return interval_of(patch, grid, cfg.alignment.side());
}

Box super_patch_box(int i, int j, const ModelConfig& cfg)
{
    const int side = cfg.alignment.side();
    const int gr = cfg.vision.gridRows();
    const int gc = cfg.vision.gridCols();
    const int ps = cfg.vision.patchSize;
    return {interval_start(i, gr, side) * ps, interval_start(j, gc, side) * ps,
            interval_start(i + 1, gr, side) * ps - 1, interval_start(j + 1, gc, side) * ps - 1};
}

std::pair<Matrix<float>, Matrix<float>> super_patch_grids(const ParameterSet<float>& params, const ModelConfig& cfg,
                                                          const ViewPairImages& images)
{
    const PatchTokens<float> cc = encode_image(images.cc, params, cfg.vision, "vision");
    const PatchTokens<float> mlo = encode_image(images.mlo, params, cfg.vision, cfg.mloPrefix());
    return {spatial_attention_aggregate(cc.grid, cc.gridRows, cc.gridCols, cfg.alignment, params, View::CC).grid,
            spatial_attention_aggregate(mlo.grid, mlo.gridRows, mlo.gridCols, cfg.alignment, params, View::MLO).grid};
}

namespace {

std::vector<AttentionMap> maps_from_grids(const ParameterSet<float>& params, const ModelConfig& cfg,
                                          const std::pair<Matrix<float>, Matrix<float>>& grids,
                                          const std::string& sampleId, const std::vector<AttentionQuery>& queries)
{
    const int side = cfg.alignment.side();
    std::vector<AttentionMap> out;
    for (const AttentionQuery& q : queries) {
        if (q.row < 0 || q.row >= side || q.col < 0 || q.col >= side) {
            throw ContractError("attention_maps: query outside the super-patch grid");
        }
        const Matrix<float>& own = q.view == View::CC ? grids.first : grids.second;
        const Matrix<float>& other = q.view == View::CC ? grids.second : grids.first;
        SuperPatchGrid<float> og{other, cfg.alignment.m, q.view == View::CC ? View::MLO : View::CC};
        const APSlice<float> slice = ap_slice(og, q.col);
        const RowVector<float> query = own.row(q.row * side + q.col);
        const CrossViewResult<float> res = cross_view_positive(query, slice.tokens, params, cfg.alignment);
        AttentionMap map;
        map.sampleId = sampleId;
        map.query = q;
        const Eigen::RowVectorXd w = res.weights.cast<double>().colwise().mean();
        map.weights.assign(w.data(), w.data() + w.size());
        map.argmaxRow = static_cast<int>(std::max_element(map.weights.begin(), map.weights.end()) -
                                         map.weights.begin());
        out.push_back(std::move(map));
    }
    return out;
}

/// ROI centre in the aligned MLO image.
Point2 aligned_mlo_point(const PreparedSample& s, double col, double row)
{
    const double angle = ap_angle_deg(s.chestPoint, s.nipplePoint);
    if (angle == 0.0) {
        return {col, row};
    }
    return align_point({col, row}, angle, s.mlo.rows(), s.mlo.cols());
}

std::vector<AttentionMap> roi_maps_from_grids(const ParameterSet<float>& params, const ModelConfig& cfg,
                                              const std::pair<Matrix<float>, Matrix<float>>& grids,
                                              const PreparedSample& s)
{
    std::vector<AttentionQuery> queries;
    std::vector<std::pair<int, int>> truth;
    const int rowsCC = static_cast<int>(s.cc.rows()), colsCC = static_cast<int>(s.cc.cols());
    const int rowsMLO = static_cast<int>(s.mlo.rows()), colsMLO = static_cast<int>(s.mlo.cols());
    for (const RoiGroundTruth& roi : s.rois) {
        const Point2 m = aligned_mlo_point(s, roi.mloColumn, roi.mloRow);
        const int ccR = super_patch_index(roi.ccRow, rowsCC, cfg, true);
        const int ccC = super_patch_index(roi.ccColumn, colsCC, cfg, false);
        const int mR = super_patch_index(m.y, rowsMLO, cfg, true);
        const int mC = super_patch_index(m.x, colsMLO, cfg, false);
        queries.push_back({View::CC, ccR, ccC});
        truth.emplace_back(mR, mC);
        queries.push_back({View::MLO, mR, mC});
        truth.emplace_back(ccR, ccC);
    }
    std::vector<AttentionMap> maps = maps_from_grids(params, cfg, grids, s.sampleId, queries);
    for (std::size_t k = 0; k < maps.size(); ++k) {
        maps[k].groundTruthRow = truth[k].first;
        maps[k].groundTruthColumn = truth[k].second;
    }
    return maps;
}

}  // namespace

std::vector<AttentionMap> attention_maps(const ParameterSet<float>& params, const RunConfig& cfg,
                                         const PreparedSample& sample, const std::vector<AttentionQuery>& queries)
{
    const auto grids = super_patch_grids(params, cfg.model, eval_images(sample, cfg.preprocess));
    return maps_from_grids(params, cfg.model, grids, sample.sampleId, queries);
}

std::vector<AttentionMap> roi_attention_maps(const ParameterSet<float>& params, const RunConfig& cfg,
                                             const PreparedSample& sample)
{
    const auto grids = super_patch_grids(params, cfg.model, eval_images(sample, cfg.preprocess));
    return roi_maps_from_grids(params, cfg.model, grids, sample);
}

double chi_square_sf(double x, int dof)
{
    if (dof < 1) {
        throw ContractError("chi_square_sf: dof must be positive");
    }
    if (x <= 0.0) {
        return 1.0;
    }
    // Regularised upper incomplete gamma Q(a, z): series below a+1,
    // Lentz continued fraction above.
    const double a = 0.5 * dof;
    const double z = 0.5 * x;
    const double lnPre = -z + a * std::log(z) - std::lgamma(a);
    if (z < a + 1.0) {
        double term = 1.0 / a, sum = term;
        for (int n = 1; n < 1000; ++n) {
            term *= z / (a + n);
            sum += term;
            if (std::abs(term) < std::abs(sum) * 1e-15) {
                break;
            }
        }
        return std::max(0.0, 1.0 - sum * std::exp(lnPre));
    }
    constexpr double tiny = 1e-300;
    double b = z + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
    for (int n = 1; n < 1000; ++n) {
        const double an = -n * (n - a);
        b += 2.0;
        d = an * d + b;
        d = std::abs(d) < tiny ? tiny : d;
        c = b + an / c;
        c = std::abs(c) < tiny ? tiny : c;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < 1e-15) {
            break;
        }
    }
    return std::exp(lnPre) * h;
}

LocalizationStats localization(const std::vector<AttentionMap>& maps, int m)
{
    LocalizationStats st;
    const int side = static_cast<int>(std::lround(std::sqrt(double(m))));
    st.chance = 3.0 / side;
    st.argmaxHistogram.assign(static_cast<std::size_t>(side), 0);
    for (const auto& map : maps) {
        if (map.groundTruthRow < 0) {
            continue;
        }
        ++st.queries;
        if (std::abs(map.argmaxRow - map.groundTruthRow) <= 1) {
            ++st.hits;
        }
        ++st.argmaxHistogram.at(static_cast<std::size_t>(map.argmaxRow));
    }
    if (st.queries == 0) {
        return st;
    }
    st.hitRate = double(st.hits) / st.queries;
    const double expected = double(st.queries) / side;
    for (int count : st.argmaxHistogram) {
        st.chiSquare += (count - expected) * (count - expected) / expected;
    }
    st.pValue = side > 1 ? chi_square_sf(st.chiSquare, side - 1) : 1.0;
    return st;
}

LocalizationStats evaluate_localization(const ParameterSet<float>& params, const RunConfig& cfg,
                                        const std::vector<PreparedSample>& samples)
{
    std::vector<AttentionMap> all;
    const std::size_t n = std::min(samples.size(), static_cast<std::size_t>(cfg.eval.attnSamples));
    for (std::size_t i = 0; i < n; ++i) {
        if (samples[i].rois.empty()) {
            continue;
        }
        const auto grids = super_patch_grids(params, cfg.model, eval_images(samples[i], cfg.preprocess));
        auto maps = roi_maps_from_grids(params, cfg.model, grids, samples[i]);
        all.insert(all.end(), maps.begin(), maps.end());
    }
    return localization(all, cfg.model.alignment.m);
}

void write_attention_overlay(const std::filesystem::path& path, const ViewPairImages& images, const AttentionMap& map,
                             const ModelConfig& cfg)
{
    const Image& qImg = map.query.view == View::CC ? images.cc : images.mlo;
    const Image& kImg = map.query.view == View::CC ? images.mlo : images.cc;
    const Index h = qImg.rows(), w = qImg.cols();
    constexpr Index gap = 4;
    auto unit = [](const Image& im) {
        const float lo = im.minCoeff(), hi = im.maxCoeff();
        return Image(hi > lo ? ((im - lo) / (hi - lo)).eval() : Image::Zero(im.rows(), im.cols()));
    };
    Image r = Image::Zero(h, 2 * w + gap), g = r, b = r;
    const Image qu = unit(qImg), ku = unit(kImg);
    for (Image* ch : {&r, &g, &b}) {
        ch->block(0, 0, h, w) = qu;
        ch->block(0, w + gap, h, w) = ku;
    }
    const double peak = *std::max_element(map.weights.begin(), map.weights.end());
    for (int i = 0; i < static_cast<int>(map.weights.size()); ++i) {
        const Box box = super_patch_box(i, map.query.col, cfg);
        const float heat = peak > 0 ? static_cast<float>(map.weights[static_cast<std::size_t>(i)] / peak) : 0.f;
        for (int y = box.row0; y <= box.row1; ++y) {
            for (int x = box.col0; x <= box.col1; ++x) {
                const Index cx = w + gap + x;
                r(y, cx) = std::min(1.f, 0.5f * r(y, cx) + 0.5f * heat);
                g(y, cx) *= 0.5f;
                b(y, cx) *= 0.5f;
            }
        }
    }
    auto outline = [&](const Box& box, Index offset, float cr, float cg, float cb) {
        for (int y = box.row0; y <= box.row1; ++y) {
            for (int x = box.col0; x <= box.col1; ++x) {
                if (y == box.row0 || y == box.row1 || x == box.col0 || x == box.col1) {
                    r(y, offset + x) = cr;
                    g(y, offset + x) = cg;
                    b(y, offset + x) = cb;
                }
            }
        }
    };
    outline(super_patch_box(map.query.row, map.query.col, cfg), 0, 0.f, 0.3f, 1.f);
    if (map.groundTruthRow >= 0) {
        outline(super_patch_box(map.groundTruthRow, map.query.col, cfg), w + gap, 1.f, 1.f, 1.f);
    }
    outline(super_patch_box(map.argmaxRow, map.query.col, cfg), w + gap, 1.f, 0.f, 0.f);
    write_png_rgb(path, r, g, b);
}

std::vector<AblationRow> ablation_grid(const RunConfig& base)
{
    std::vector<AblationRow> rows;
    const int m = base.model.alignment.m;
    AblationRow row;
    row.m = m;
    row.gla = false;
    rows.push_back(row);
    row.gla = true;
    row.spn = false;
    rows.push_back(row);
    row.spn = true;
    row.saa = false;
    rows.push_back(row);
    row.saa = true;
    row.apSampling = false;
    rows.push_back(row);
    row.apSampling = true;
    for (int mm : base.eval.ablationM) {
        row.m = mm;
        rows.push_back(row);
    }
    return rows;
}

std::vector<AblationRow> run_ablation(const DatasetManifest& manifest, const RunConfig& base,
                                      const std::filesystem::path& outDir)
{
    std::vector<AblationRow> rows = ablation_grid(base);
    const EvalData data = load_eval_data(manifest, base);
    for (std::size_t k = 0; k < rows.size(); ++k) {
        AblationRow& row = rows[k];
        RunConfig cfg = base;
        cfg.model.alignment.gla = row.gla;
        cfg.model.alignment.spn = row.spn;
        cfg.model.alignment.saa = row.saa;
        cfg.model.alignment.apSampling = row.apSampling;
        cfg.model.alignment.m = row.m;
        cfg.validate();
        PretrainOptions opts;
        opts.outDir = outDir / ("row" + std::to_string(k));
        const PretrainResult res = pretrain(manifest, cfg, opts);
        const ParameterSet<float>& p = res.checkpoint.params;
        row.zeroShot = evaluate(p, cfg, data, Task::Birads, Setting::ZeroShot, 1.0, ViewMode::Single);
        row.linearProbe = evaluate(p, cfg, data, Task::Birads, Setting::LinearProbe, 1.0, ViewMode::Single);
        row.fineTune = evaluate(p, cfg, data, Task::Birads, Setting::FineTune, 1.0, ViewMode::Single);
        row.localizationHitRate = evaluate_localization(p, cfg, data.test).hitRate;
    }
    return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows)
{
    std::ostringstream os;
    os << "GLA,SPN,SAA,APSampling,M,zeroShot_bACC,zeroShot_AUC,linearProbe_bACC,linearProbe_AUC,fineTune_bACC,"
          "fineTune_AUC,localizationHitRate\n";
    os << std::fixed << std::setprecision(4);
    for (const auto& r : rows) {
        os << int(r.gla) << ',' << int(r.spn) << ',' << int(r.saa) << ',' << int(r.apSampling) << ',' << r.m << ','
           << r.zeroShot.bACC << ',' << r.zeroShot.AUC << ',' << r.linearProbe.bACC << ',' << r.linearProbe.AUC << ','
           << r.fineTune.bACC << ',' << r.fineTune.AUC << ',' << r.localizationHitRate << '\n';
    }
    return os.str();
}

}  // namespace glam
