#include "glam/training.hpp"

#include "glam/image.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace glam {

BalancedSampler::BalancedSampler(const std::vector<int>& labels, int numClasses)
{
    if (numClasses < 1) {
        throw ConfigError("BalancedSampler: need at least one class");
    }
    byClass_.resize(static_cast<std::size_t>(numClasses));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= numClasses) {
            throw ConfigError("BalancedSampler: label out of range");
        }
        byClass_[static_cast<std::size_t>(labels[i])].push_back(static_cast<int>(i));
    }
    for (std::size_t c = 0; c < byClass_.size(); ++c) {
        if (byClass_[c].empty()) {
            throw ConfigError("BalancedSampler: class " + std::to_string(c) + " has no examples");
        }
    }
}

std::vector<int> BalancedSampler::next(int batchSize, std::mt19937_64& rng) const
{
    std::vector<int> out(static_cast<std::size_t>(batchSize));
    for (auto& idx : out) {
        const auto c = std::uniform_int_distribution<std::size_t>(0, byClass_.size() - 1)(rng);
        const auto& members = byClass_[c];
        idx = members[std::uniform_int_distribution<std::size_t>(0, members.size() - 1)(rng)];
    }
    return out;
}

double cosine_lr(double lr, int step, int steps)
{
    if (steps <= 0) {
        return lr;
    }
    return lr * 0.5 * (1.0 + std::cos(std::numbers::pi * double(step) / double(steps)));
}

namespace {

bool decays(const std::string& name)
{
    return name.size() > 2 && name.compare(name.size() - 2, 2, ".w") == 0;
}

}  // namespace

void sgd_step(ParameterSet<float>& params, ParameterSet<float>& velocity, const ParameterSet<float>& grads, double lr,
              double momentum, double weightDecay)
{
    const auto mu = static_cast<float>(momentum);
    const auto eta = static_cast<float>(lr);
    const auto wd = static_cast<float>(weightDecay);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& w = params.at(i);
        auto& v = velocity.at(i);
        if (decays(params.names()[i])) {
            v = mu * v + grads.at(i) + wd * w;
        } else {
            v = mu * v + grads.at(i);
        }
        w -= eta * v;
    }
}

void adamw_step(ParameterSet<float>& params, ParameterSet<float>& m1, ParameterSet<float>& m2,
                const ParameterSet<float>& grads, double lr, double beta1, double beta2, double weightDecay, int t)
{
    const auto b1 = static_cast<float>(beta1);
    const auto b2 = static_cast<float>(beta2);
    const auto c1 = static_cast<float>(1.0 - std::pow(beta1, t));
    const auto c2 = static_cast<float>(1.0 - std::pow(beta2, t));
    const auto eta = static_cast<float>(lr);
    const auto wd = static_cast<float>(weightDecay);
    constexpr float eps = 1e-8f;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& w = params.at(i);
        const auto& g = grads.at(i);
        m1.at(i) = b1 * m1.at(i) + (1.f - b1) * g;
        m2.at(i) = (b2 * m2.at(i).array() + (1.f - b2) * g.array().square()).matrix();
        if (decays(params.names()[i])) {
            w *= 1.f - eta * wd;
        }
        w.array() -= eta * (m1.at(i).array() / c1) / ((m2.at(i).array() / c2).sqrt() + eps);
    }
}

// Checkpoint file: magic, version, then length-prefixed strings, step and
// two named parameter tables (weights, momentum).

namespace {

constexpr char kMagic[8] = {'G', 'L', 'A', 'M', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T v)
{
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is)
{
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) {
        throw IoError("checkpoint: truncated file");
    }
    return v;
}

void put_string(std::ostream& os, const std::string& s)
{
    put<std::uint64_t>(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is)
{
    const auto n = get<std::uint64_t>(is);
    if (n > (1ull << 32)) {
        throw IoError("checkpoint: corrupt string length");
    }
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    if (!is) {
        throw IoError("checkpoint: truncated file");
    }
    return s;
}

void put_params(std::ostream& os, const ParameterSet<float>& p)
{
    put<std::uint64_t>(os, p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        put_string(os, p.names()[i]);
        put<std::int64_t>(os, p.at(i).rows());
        put<std::int64_t>(os, p.at(i).cols());
        os.write(reinterpret_cast<const char*>(p.at(i).data()),
                 static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(p.at(i).size())));
    }
}

ParameterSet<float> get_params(std::istream& is)
{
    ParameterSet<float> p;
    const auto n = get<std::uint64_t>(is);
    for (std::uint64_t i = 0; i < n; ++i) {
        std::string name = get_string(is);
        const auto rows = get<std::int64_t>(is);
        const auto cols = get<std::int64_t>(is);
        if (rows < 0 || cols < 0 || rows * cols > (1ll << 30)) {
            throw IoError("checkpoint: corrupt shape for " + name);
        }
        Matrix<float> m(rows, cols);
        is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(float) * std::size_t(m.size())));
        if (!is) {
            throw IoError("checkpoint: truncated file");
        }
        p.add(name, std::move(m));
    }
    return p;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck)
{
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw IoError("cannot write checkpoint " + path.string());
    }
    os.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(os, kVersion);
    put_string(os, ck.configJson);
    put_string(os, ck.configHash);
    put_string(os, ck.modelHash);
    put<std::uint64_t>(os, ck.step);
    put_string(os, ck.rngState);
    put_params(os, ck.params);
    put_params(os, ck.velocity);
    put_params(os, ck.secondMoment);
    if (!os) {
        throw IoError("failed writing checkpoint " + path.string());
    }
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw IoError("cannot open checkpoint " + path.string());
    }
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || !std::equal(magic, magic + 8, kMagic)) {
        throw IoError("not a checkpoint: " + path.string());
    }
    if (get<std::uint32_t>(is) != kVersion) {
        throw IoError("unsupported checkpoint version in " + path.string());
    }
    Checkpoint ck;
    ck.configJson = get_string(is);
    ck.configHash = get_string(is);
    ck.modelHash = get_string(is);
    ck.step = get<std::uint64_t>(is);
    ck.rngState = get_string(is);
    ck.params = get_params(is);
    ck.velocity = get_params(is);
    ck.secondMoment = get_params(is);
    return ck;
}

PreparedSample prepare_sample(const Sample& s, const PreprocessConfig& cfg)
{
    PreparedSample out;
    out.sampleId = s.sampleId;
    out.cc = s.rawCC;
    out.mlo = s.rawMLO;
    try {
        out.mlo = remove_pectoral(out.mlo, detect_pectoral_line(out.mlo, cfg.hough));
    } catch (const NoPectoralLine&) {
    }
    out.mlo = align_ap(out.mlo, s.chestPoint, s.nipplePoint);
    out.report = parse_report(s.report);
    out.densityClass = s.densityClass;
    out.biradsLikeLabel = s.biradsLikeLabel;
    out.chestPoint = s.chestPoint;
    out.nipplePoint = s.nipplePoint;
    out.rois = s.rois;
    return out;
}

ViewPairImages eval_images(const PreparedSample& s, const PreprocessConfig& cfg)
{
    return {normalize_resize(s.cc, cfg.targetSize, cfg.targetSize),
            normalize_resize(s.mlo, cfg.targetSize, cfg.targetSize)};
}

PairBatch make_pair_batch(const std::vector<const PreparedSample*>& samples, const RunConfig& cfg, std::mt19937_64* rng)
{
    PairBatch batch;
    const auto& tok = Tokenizer::standard();
    const int size = cfg.preprocess.targetSize;
    for (const PreparedSample* s : samples) {
        Image cc = s->cc;
        Image mlo = s->mlo;
        std::string text = s->report.text;
        if (rng != nullptr) {
            const AffineParams a = sample_affine(*rng, cfg.preprocess.affine, cc.rows(), cc.cols());
            cc = apply_affine(cc, a);
            mlo = apply_affine(mlo, cfg.preprocess.sharedAffine
                                        ? a
                                        : sample_affine(*rng, cfg.preprocess.affine, mlo.rows(), mlo.cols()));
            text = augment_report(s->report, *rng, {true, cfg.training.synonymProb}).text;
        }
        batch.cc.push_back(normalize_resize(cc, size, size));
        batch.mlo.push_back(normalize_resize(mlo, size, size));
        batch.tokens.push_back(tok.encode(text, cfg.model.text.maxLength));
    }
    return batch;
}

ParameterSet<float> initial_parameters(const RunConfig& cfg)
{
    std::mt19937_64 rng(cfg.seed);
    return init_model<float>(cfg.model, rng);
}

std::string loss_csv_header() { return "step,globalMV,globalIT,local,total,tau,lr"; }

std::string loss_csv_row(int step, const LossBreakdown<float>& l, double lr)
{
    std::ostringstream os;
    os.precision(9);
    os << step << ',' << l.globalMV << ',' << l.globalIT << ',' << l.local << ',' << l.total << ',' << l.tau << ','
       << lr;
    return os.str();
}

namespace {

std::string rng_state(const std::mt19937_64& rng)
{
    std::ostringstream os;
    os << rng;
    return os.str();
}

}  // namespace

PretrainResult pretrain(const DatasetManifest& manifest, const RunConfig& cfg, const PretrainOptions& options)
{
    cfg.validate();
    const std::vector<int> trainIdx = manifest.indices(Split::Train);
    if (trainIdx.empty()) {
        throw ConfigError("pretrain: manifest has no training samples");
    }
    const Task balance = parse_task(cfg.training.balanceLabel);
    std::vector<PreparedSample> data;
    std::vector<int> labels;
    data.reserve(trainIdx.size());
    for (int idx : trainIdx) {
        data.push_back(prepare_sample(load_sample(manifest, idx), cfg.preprocess));
        labels.push_back(task_label(manifest.entries[static_cast<std::size_t>(idx)], balance));
    }
    const BalancedSampler sampler(labels, class_count(balance));

    PretrainResult result;
    Checkpoint& ck = result.checkpoint;
    ck.params = initial_parameters(cfg);
    ck.velocity = ck.params.zerosLike();
    const bool adam = cfg.training.optimizer == "adamw";
    if (adam) {
        ck.secondMoment = ck.params.zerosLike();
    }
    ck.configJson = run_config_json(cfg);
    ck.configHash = config_hash(cfg);
    ck.modelHash = model_hash(cfg.model);
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);

    const bool writing = !options.outDir.empty();
    std::ofstream csv;
    if (writing) {
        std::filesystem::create_directories(options.outDir);
        csv.open(options.outDir / "loss.csv", std::ios::trunc);
        if (!csv) {
            throw IoError("cannot write " + (options.outDir / "loss.csv").string());
        }
        csv << "# config " << ck.configHash << '\n' << loss_csv_header() << '\n';
    }
    auto snapshot = [&](const std::string& file) {
        ck.rngState = rng_state(rng);
        if (writing && options.writeCheckpoints) {
            save_checkpoint(options.outDir / file, ck);
        }
    };

    const TrainConfig& tc = cfg.training;
    for (int step = 0; step < tc.steps; ++step) {
        const std::vector<int> pick = sampler.next(tc.batchSize, rng);
        std::vector<const PreparedSample*> members;
        for (int k : pick) {
            members.push_back(&data[static_cast<std::size_t>(k)]);
        }
        if (options.onBatch) {
            std::vector<std::string> ids;
            for (const auto* m : members) {
                ids.push_back(m->sampleId);
            }
            options.onBatch(step, ids);
        }
        const PairBatch batch = make_pair_batch(members, cfg, &rng);

        Graph<float> graph;
        Binder<float> bind(graph, ck.params);
        const LossVars<float> lv = forward_losses(bind, cfg.model, batch);
        const LossBreakdown<float> l = breakdown(lv);
        if (!std::isfinite(l.total)) {
            std::vector<std::string> ids;
            std::string list;
            for (const auto* m : members) {
                ids.push_back(m->sampleId);
                list += (list.empty() ? "" : " ") + m->sampleId;
            }
            throw NonFiniteLoss("non-finite loss at step " + std::to_string(step) + "; batch: " + list, ids);
        }
        graph.backward(lv.total);
        const double lr = cosine_lr(tc.lr, step, tc.steps);
        if (adam) {
            adamw_step(ck.params, ck.velocity, ck.secondMoment, bind.gradients(), lr, tc.momentum, 0.999,
                       tc.weightDecay, step + 1);
        } else {
            sgd_step(ck.params, ck.velocity, bind.gradients(), lr, tc.momentum, tc.weightDecay);
        }
        ck.step = static_cast<std::uint64_t>(step + 1);

        result.losses.push_back(l);
        result.lrs.push_back(lr);
        if (writing) {
            csv << loss_csv_row(step, l, lr) << '\n';
            csv.flush();
        }
        if (options.onStep) {
            options.onStep(step, l);
        }
        if (tc.checkpointEvery > 0 && (step + 1) % tc.checkpointEvery == 0 && step + 1 < tc.steps) {
            snapshot("checkpoint_step" + std::to_string(step + 1) + ".bin");
        }
    }
    snapshot("checkpoint.bin");
    return result;
}

}  // namespace glam
