#include "glam/config.hpp"

#include <json.hpp>
#include <openssl/evp.h>

#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <type_traits>

namespace glam {

using nlohmann::json;

namespace {

// Reads known keys from one JSON object and rejects the rest.
class Block {
public:
    Block(const json& obj, std::string path) : obj_(obj), path_(std::move(path))
    {
        if (!obj_.is_object()) {
            throw ConfigError(path_ + ": expected an object");
        }
    }

    template <typename T>
    void read(const std::string& key, T& out)
    {
        seen_.insert(key);
        auto it = obj_.find(key);
        if (it == obj_.end()) {
            return;
        }
        if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
            if (!it->is_number_integer()) {
                throw ConfigError(path_ + "." + key + ": expected an integer");
            }
        }
        try {
            out = it->template get<T>();
        } catch (const json::exception&) {
            throw ConfigError(path_ + "." + key + ": wrong type");
        }
    }

    Block child(const std::string& key)
    {
        seen_.insert(key);
        auto it = obj_.find(key);
        return Block(it == obj_.end() ? empty() : *it, path_ + "." + key);
    }

    void finish() const
    {
        for (auto it = obj_.begin(); it != obj_.end(); ++it) {
            if (seen_.count(it.key()) == 0) {
                throw ConfigError(path_ + ": unknown key '" + it.key() + "'");
            }
        }
    }

private:
    static const json& empty()
    {
        static const json e = json::object();
        return e;
    }

    const json& obj_;
    std::string path_;
    std::set<std::string> seen_;
};

json phantom_json(const DatasetConfig& d)
{
    const PhantomConfig& p = d.phantom;
    return {{"count", d.count},
            {"nx", p.nx},
            {"ny", p.ny},
            {"nz", p.nz},
            {"roiCountMin", p.roiCountMin},
            {"roiCountMax", p.roiCountMax},
            {"densityProbs", p.densityProbs},
            {"massProb", p.massProb},
            {"massRadiusMin", p.massRadiusMin},
            {"massRadiusMax", p.massRadiusMax},
            {"calcRadiusMin", p.calcRadiusMin},
            {"calcRadiusMax", p.calcRadiusMax},
            {"pectoralIntensity", p.pectoralIntensity},
            {"wedgeApMin", p.wedgeApMin},
            {"wedgeApMax", p.wedgeApMax},
            {"wedgeObliqueMin", p.wedgeObliqueMin},
            {"wedgeObliqueMax", p.wedgeObliqueMax},
            {"mloAngleMin", p.mloAngleMin},
            {"mloAngleMax", p.mloAngleMax}};
}

json encoders_json(const ModelConfig& m)
{
    return {{"patchSize", m.vision.patchSize},   {"dim", m.vision.dim},
            {"depth", m.vision.depth},           {"heads", m.vision.heads},
            {"mlpRatio", m.vision.mlpRatio},     {"textDepth", m.text.depth},
            {"textHeads", m.text.heads},         {"textMaxLength", m.text.maxLength},
            {"sharedVisualEncoder", m.sharedVisualEncoder}};
}

json alignment_json(const AlignmentConfig& a)
{
    return {{"m", a.m},
            {"heads", a.heads},
            {"gla", a.gla},
            {"spn", a.spn},
            {"saa", a.saa},
            {"apSampling", a.apSampling},
            {"tauInit", a.tauInit},
            {"literalEq4", a.literalEq4},
            {"dotProductAttention", a.dotProductAttention}};
}

json probe_json(const ProbeConfig& p)
{
    return {{"batchSize", p.batchSize}, {"steps", p.steps}, {"lr", p.lr}, {"weightDecay", p.weightDecay}};
}

json to_json(const RunConfig& c)
{
    const auto& pp = c.preprocess;
    return {{"phantom", phantom_json(c.data)},
            {"preprocess",
             {{"houghEdgeThresh", pp.hough.edgeThreshold},
              {"houghMinVotesFrac", pp.hough.minVotesFrac},
              {"houghRefine", pp.hough.refine},
              {"affine",
               {{"rotationDeg", pp.affine.rotationDeg},
                {"translate", pp.affine.translate},
                {"scaleMin", pp.affine.scaleMin},
                {"scaleMax", pp.affine.scaleMax},
                {"shearDeg", pp.affine.shearDeg}}},
              {"sharedAffine", pp.sharedAffine},
              {"targetSize", pp.targetSize}}},
            {"encoders", encoders_json(c.model)},
            {"alignment", alignment_json(c.model.alignment)},
            {"training",
             {{"preset", c.training.preset},
              {"batchSize", c.training.batchSize},
              {"steps", c.training.steps},
              {"lr", c.training.lr},
              {"weightDecay", c.training.weightDecay},
              {"momentum", c.training.momentum},
              {"optimizer", c.training.optimizer},
              {"checkpointEvery", c.training.checkpointEvery},
              {"balanceLabel", c.training.balanceLabel},
              {"synonymProb", c.training.synonymProb}}},
            {"eval",
             {{"probe", probe_json(c.eval.probe)},
              {"fineTune", probe_json(c.eval.fineTune)},
              {"singleView", c.eval.singleView},
              {"attnSamples", c.eval.attnSamples},
              {"ablationM", c.eval.ablationM}}},
            {"outDir", c.outDir},
            {"seed", c.seed}};
}

void read_probe(Block b, ProbeConfig& p)
{
    b.read("batchSize", p.batchSize);
    b.read("steps", p.steps);
    b.read("lr", p.lr);
    b.read("weightDecay", p.weightDecay);
    b.finish();
}

}  // namespace

void TrainConfig::validate() const
{
    if (preset != "desk" && preset != "paper") {
        throw ConfigError("training.preset must be 'desk' or 'paper'");
    }
    if (batchSize < 1 || steps < 0 || !(lr > 0) || weightDecay < 0 || momentum < 0 || momentum >= 1 ||
        checkpointEvery < 1) {
        throw ConfigError("training: invalid batch size, steps, lr, weight decay, momentum or checkpoint interval");
    }
    if (optimizer != "sgd" && optimizer != "adamw") {
        throw ConfigError("training.optimizer must be sgd or adamw");
    }
    if (balanceLabel != "birads" && balanceLabel != "density" && balanceLabel != "cancerLike") {
        throw ConfigError("training.balanceLabel must be birads, density or cancerLike");
    }
    if (synonymProb < 0 || synonymProb > 1) {
        throw ConfigError("training.synonymProb outside [0, 1]");
    }
}

TrainConfig TrainConfig::paperPreset()
{
    TrainConfig t;
    t.preset = "paper";
    t.batchSize = 144;
    t.steps = 40000;
    t.lr = 4e-5;
    t.weightDecay = 0.2;
    t.optimizer = "sgd";
    return t;
}

void EvalConfig::validate() const
{
    for (const ProbeConfig* p : {&probe, &fineTune}) {
        if (p->batchSize < 1 || p->steps < 0 || !(p->lr > 0) || p->weightDecay < 0) {
            throw ConfigError("eval: invalid probe settings");
        }
    }
    if (singleView != "cc" && singleView != "mlo") {
        throw ConfigError("eval.singleView must be 'cc' or 'mlo'");
    }
    if (attnSamples < 1) {
        throw ConfigError("eval.attnSamples must be positive");
    }
}

void RunConfig::validate() const
{
    data.phantom.validate();
    if (data.count < 1) {
        throw ConfigError("phantom.count must be positive");
    }
    preprocess.affine.validate();
    if (preprocess.hough.edgeThreshold <= 0 || preprocess.hough.edgeThreshold >= 1 ||
        preprocess.hough.minVotesFrac <= 0) {
        throw ConfigError("preprocess: invalid Hough settings");
    }
    if (preprocess.targetSize < model.vision.patchSize) {
        throw ConfigError("preprocess.targetSize must be at least the patch size");
    }
    if (model.vision.imageHeight != preprocess.targetSize || model.vision.imageWidth != preprocess.targetSize) {
        throw ConfigError("encoder image size must equal preprocess.targetSize");
    }
    model.vision.validate();
    if (model.text.depth < 0 || model.text.heads <= 0 || model.vision.dim % model.text.heads != 0 ||
        model.text.maxLength < 2) {
        throw ConfigError("encoders: invalid text encoder settings");
    }
    model.alignment.validate();
    if (model.vision.dim % model.alignment.heads != 0) {
        throw ConfigError("alignment.heads must divide the encoder dim");
    }
    if (model.alignment.side() > model.vision.gridRows() || model.alignment.side() > model.vision.gridCols()) {
        throw ConfigError("alignment.m: sqrt(M) exceeds the raw patch grid");
    }
    training.validate();
    eval.validate();
    for (int m : eval.ablationM) {
        AlignmentConfig a = model.alignment;
        a.m = m;
        a.validate();
        if (a.side() > model.vision.gridRows()) {
            throw ConfigError("eval.ablationM: sqrt(M) exceeds the raw patch grid");
        }
    }
    if (outDir.empty()) {
        throw ConfigError("outDir must not be empty");
    }
}

RunConfig parse_run_config(const std::string& jsonText)
{
    json root;
    try {
        root = json::parse(jsonText);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: malformed JSON: ") + e.what());
    }
    RunConfig c;
    Block top(root, "config");
    {
        Block b = top.child("phantom");
        PhantomConfig& p = c.data.phantom;
        b.read("count", c.data.count);
        b.read("nx", p.nx);
        b.read("ny", p.ny);
        b.read("nz", p.nz);
        b.read("roiCountMin", p.roiCountMin);
        b.read("roiCountMax", p.roiCountMax);
        b.read("densityProbs", p.densityProbs);
        b.read("massProb", p.massProb);
        b.read("massRadiusMin", p.massRadiusMin);
        b.read("massRadiusMax", p.massRadiusMax);
        b.read("calcRadiusMin", p.calcRadiusMin);
        b.read("calcRadiusMax", p.calcRadiusMax);
        b.read("pectoralIntensity", p.pectoralIntensity);
        b.read("wedgeApMin", p.wedgeApMin);
        b.read("wedgeApMax", p.wedgeApMax);
        b.read("wedgeObliqueMin", p.wedgeObliqueMin);
        b.read("wedgeObliqueMax", p.wedgeObliqueMax);
        b.read("mloAngleMin", p.mloAngleMin);
        b.read("mloAngleMax", p.mloAngleMax);
        b.finish();
    }
    {
        Block b = top.child("preprocess");
        auto& pp = c.preprocess;
        b.read("houghEdgeThresh", pp.hough.edgeThreshold);
        b.read("houghMinVotesFrac", pp.hough.minVotesFrac);
        b.read("houghRefine", pp.hough.refine);
        Block a = b.child("affine");
        a.read("rotationDeg", pp.affine.rotationDeg);
        a.read("translate", pp.affine.translate);
        a.read("scaleMin", pp.affine.scaleMin);
        a.read("scaleMax", pp.affine.scaleMax);
        a.read("shearDeg", pp.affine.shearDeg);
        a.finish();
        b.read("sharedAffine", pp.sharedAffine);
        b.read("targetSize", pp.targetSize);
        b.finish();
        c.model.vision.imageHeight = c.model.vision.imageWidth = pp.targetSize;
    }
    {
        Block b = top.child("encoders");
        auto& m = c.model;
        b.read("patchSize", m.vision.patchSize);
        b.read("dim", m.vision.dim);
        b.read("depth", m.vision.depth);
        b.read("heads", m.vision.heads);
        b.read("mlpRatio", m.vision.mlpRatio);
        b.read("textDepth", m.text.depth);
        b.read("textHeads", m.text.heads);
        b.read("textMaxLength", m.text.maxLength);
        b.read("sharedVisualEncoder", m.sharedVisualEncoder);
        m.text.mlpRatio = m.vision.mlpRatio;
        b.finish();
    }
    {
        Block b = top.child("alignment");
        auto& a = c.model.alignment;
        b.read("m", a.m);
        b.read("heads", a.heads);
        b.read("gla", a.gla);
        b.read("spn", a.spn);
        b.read("saa", a.saa);
        b.read("apSampling", a.apSampling);
        b.read("tauInit", a.tauInit);
        b.read("literalEq4", a.literalEq4);
        b.read("dotProductAttention", a.dotProductAttention);
        b.finish();
    }
    {
        Block b = top.child("training");
        auto& t = c.training;
        b.read("preset", t.preset);
        b.read("batchSize", t.batchSize);
        b.read("steps", t.steps);
        b.read("lr", t.lr);
        b.read("weightDecay", t.weightDecay);
        b.read("momentum", t.momentum);
        b.read("optimizer", t.optimizer);
        b.read("checkpointEvery", t.checkpointEvery);
        b.read("balanceLabel", t.balanceLabel);
        b.read("synonymProb", t.synonymProb);
        b.finish();
    }
    {
        Block b = top.child("eval");
        read_probe(b.child("probe"), c.eval.probe);
        read_probe(b.child("fineTune"), c.eval.fineTune);
        b.read("singleView", c.eval.singleView);
        b.read("attnSamples", c.eval.attnSamples);
        b.read("ablationM", c.eval.ablationM);
        b.finish();
    }
    top.read("outDir", c.outDir);
    top.read("seed", c.seed);
    top.finish();
    c.validate();
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read config " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

std::string run_config_json(const RunConfig& cfg) { return to_json(cfg).dump(2); }

std::string sha256_hex(const std::string& bytes)
{
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("sha256 failed");
    }
    std::ostringstream out;
    for (unsigned int i = 0; i < len; ++i) {
        out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
    }
    return out.str();
}

std::string config_hash(const RunConfig& cfg) { return sha256_hex(to_json(cfg).dump()); }

std::string generator_hash(const RunConfig& cfg)
{
    return sha256_hex(json{{"phantom", phantom_json(cfg.data)}, {"seed", cfg.seed}}.dump());
}

std::string model_hash(const ModelConfig& cfg)
{
    json j = encoders_json(cfg);
    j["imageSize"] = {cfg.vision.imageHeight, cfg.vision.imageWidth};
    j["alignment"] = alignment_json(cfg.alignment);
    return sha256_hex(j.dump());
}

}  // namespace glam
