#include "glam/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace glam {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json box_json(const Box& b) { return {b.row0, b.col0, b.row1, b.col1}; }

Box box_from(const json& j) { return {j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>(), j.at(3).get<int>()}; }

json roi_json(const RoiGroundTruth& g)
{
    return {{"kind", g.kind == RoiKind::Mass ? "mass" : "calcification"},
            {"radius", g.radius},
            {"ccColumn", g.ccColumn},
            {"mloColumn", g.mloColumn},
            {"ccRow", g.ccRow},
            {"mloRow", g.mloRow},
            {"ccBox", box_json(g.ccBox)},
            {"mloBox", box_json(g.mloBox)}};
}

RoiGroundTruth roi_from(const json& j)
{
    RoiGroundTruth g{};
    g.kind = j.at("kind").get<std::string>() == "mass" ? RoiKind::Mass : RoiKind::Calcification;
    g.radius = j.at("radius").get<float>();
    g.ccColumn = j.at("ccColumn").get<int>();
    g.mloColumn = j.at("mloColumn").get<int>();
    g.ccRow = j.at("ccRow").get<int>();
    g.mloRow = j.at("mloRow").get<int>();
    g.ccBox = box_from(j.at("ccBox"));
    g.mloBox = box_from(j.at("mloBox"));
    return g;
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
}

std::string read_text(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot read " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string sample_id(int i)
{
    char buf[16];
    std::snprintf(buf, sizeof buf, "s%05d", i);
    return buf;
}

}  // namespace

const char* split_name(Split s)
{
    switch (s) {
    case Split::Train:
        return "train";
    case Split::Val:
        return "val";
    default:
        return "test";
    }
}

std::vector<int> DatasetManifest::indices(Split s) const
{
    std::vector<int> out;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].split == s) {
            out.push_back(static_cast<int>(i));
        }
    }
    return out;
}

std::uint64_t sample_seed(std::uint64_t seed, int index)
{
    // splitmix64 finaliser over (seed, index)
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(index) + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::vector<Split> assign_splits(const std::vector<std::string>& sampleIds)
{
    const std::size_t n = sampleIds.size();
    std::vector<std::pair<std::string, std::size_t>> keyed;
    keyed.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        keyed.emplace_back(sha256_hex(sampleIds[i]), i);
    }
    std::sort(keyed.begin(), keyed.end());
    const std::size_t nTrain = n * 7 / 10, nVal = n / 10;
    std::vector<Split> out(n, Split::Test);
    for (std::size_t k = 0; k < n; ++k) {
        out[keyed[k].second] = k < nTrain ? Split::Train : (k < nTrain + nVal ? Split::Val : Split::Test);
    }
    return out;
}

std::string manifest_json(const DatasetManifest& m)
{
    json entries = json::array();
    for (const auto& e : m.entries) {
        json rois = json::array();
        for (const auto& g : e.roiGroundTruth) {
            rois.push_back(roi_json(g));
        }
        entries.push_back({{"sampleId", e.sampleId},
                           {"pathCC", e.pathCC},
                           {"pathMLO", e.pathMLO},
                           {"reportPath", e.reportPath},
                           {"groundTruthPath", e.groundTruthPath},
                           {"densityClass", e.densityClass},
                           {"biradsLikeLabel", e.biradsLikeLabel},
                           {"split", split_name(e.split)},
                           {"mloAngleDeg", e.mloAngleDeg},
                           {"chestPoint", {e.chestPoint.x, e.chestPoint.y}},
                           {"nipplePoint", {e.nipplePoint.x, e.nipplePoint.y}},
                           {"roiGroundTruth", rois}});
    }
    return json{{"generatorConfigHash", m.generatorConfigHash}, {"entries", entries}}.dump(1);
}

DatasetManifest build_dataset(const RunConfig& cfg, const fs::path& dir)
{
    cfg.validate();
    const bool existed = fs::exists(dir);
    try {
        fs::create_directories(dir / "images");
        fs::create_directories(dir / "reports");
        fs::create_directories(dir / "truth");

        DatasetManifest m;
        m.root = dir;
        m.generatorConfigHash = generator_hash(cfg);
        std::vector<std::string> ids;
        for (int i = 0; i < cfg.data.count; ++i) {
            ids.push_back(sample_id(i));
        }
        const std::vector<Split> splits = assign_splits(ids);

        for (int i = 0; i < cfg.data.count; ++i) {
            const std::uint64_t seed = sample_seed(cfg.seed, i);
            const Phantom p = generate_phantom(seed, cfg.data.phantom);
            std::mt19937_64 rng(seed ^ 0x5bd1e995ULL);
            const auto& pc = cfg.data.phantom;
            const double angle =
                pc.mloAngleMin + (pc.mloAngleMax - pc.mloAngleMin) * std::uniform_real_distribution<double>(0, 1)(rng);
            const RawViewPair pair = project_pair(p, angle);

            ReportMeta meta;
            meta.densityClass = p.densityClass;
            meta.roiKinds = p.roiKinds();
            meta.laterality = p.laterality;
            meta.variant = std::uniform_int_distribution<int>(0, 3)(rng);
            const ReportText report = synthesize_report(meta, rng, ReportAugment::none());

            ManifestEntry e;
            e.sampleId = ids[static_cast<std::size_t>(i)];
            e.pathCC = "images/" + e.sampleId + "_cc.png";
            e.pathMLO = "images/" + e.sampleId + "_mlo.png";
            e.reportPath = "reports/" + e.sampleId + ".txt";
            e.groundTruthPath = "truth/" + e.sampleId + ".json";
            e.densityClass = p.densityClass;
            e.biradsLikeLabel = p.biradsLikeLabel();
            e.split = splits[static_cast<std::size_t>(i)];
            e.mloAngleDeg = angle;
            e.chestPoint = {pair.chestPoint[0], pair.chestPoint[1]};
            e.nipplePoint = {pair.nipplePoint[0], pair.nipplePoint[1]};
            e.roiGroundTruth = pair.groundTruth;

            write_png16(dir / e.pathCC, pair.imageCC);
            write_png16(dir / e.pathMLO, pair.imageMLO);
            write_text(dir / e.reportPath, report.text + "\n");
            json rois = json::array();
            for (const auto& g : pair.groundTruth) {
                rois.push_back(roi_json(g));
            }
            json truth{{"sampleId", e.sampleId},
                       {"densityClass", e.densityClass},
                       {"biradsLikeLabel", e.biradsLikeLabel},
                       {"laterality", p.laterality == Laterality::Left ? "left" : "right"},
                       {"mloAngleDeg", angle},
                       {"pectoralWedge",
                        {{"apExtent", p.pectoralWedge.apExtent},
                         {"obliqueExtent", p.pectoralWedge.obliqueExtent},
                         {"intensity", p.pectoralWedge.intensity}}},
                       {"chestPoint", {e.chestPoint.x, e.chestPoint.y}},
                       {"nipplePoint", {e.nipplePoint.x, e.nipplePoint.y}},
                       {"rois", rois},
                       {"generatorConfigHash", m.generatorConfigHash}};
            write_text(dir / e.groundTruthPath, truth.dump(1) + "\n");
            m.entries.push_back(std::move(e));
        }
        write_text(dir / "manifest.json", manifest_json(m) + "\n");
        return m;
    } catch (...) {
        std::error_code ec;
        if (existed) {
            for (const char* sub : {"images", "reports", "truth", "manifest.json"}) {
                fs::remove_all(dir / sub, ec);
            }
        } else {
            fs::remove_all(dir, ec);
        }
        throw;
    }
}

DatasetManifest load_manifest(const fs::path& manifestPath)
{
    json j;
    try {
        j = json::parse(read_text(manifestPath));
    } catch (const json::exception& e) {
        throw IoError("malformed manifest " + manifestPath.string() + ": " + e.what());
    }
    DatasetManifest m;
    m.root = manifestPath.parent_path();
    try {
        m.generatorConfigHash = j.at("generatorConfigHash").get<std::string>();
        for (const auto& je : j.at("entries")) {
            ManifestEntry e;
            e.sampleId = je.at("sampleId").get<std::string>();
            e.pathCC = je.at("pathCC").get<std::string>();
            e.pathMLO = je.at("pathMLO").get<std::string>();
            e.reportPath = je.at("reportPath").get<std::string>();
            e.groundTruthPath = je.at("groundTruthPath").get<std::string>();
            e.densityClass = je.at("densityClass").get<int>();
            e.biradsLikeLabel = je.at("biradsLikeLabel").get<int>();
            const auto split = je.at("split").get<std::string>();
            e.split = split == "train" ? Split::Train : (split == "val" ? Split::Val : Split::Test);
            e.mloAngleDeg = je.at("mloAngleDeg").get<double>();
            e.chestPoint = {je.at("chestPoint").at(0).get<double>(), je.at("chestPoint").at(1).get<double>()};
            e.nipplePoint = {je.at("nipplePoint").at(0).get<double>(), je.at("nipplePoint").at(1).get<double>()};
            for (const auto& r : je.at("roiGroundTruth")) {
                e.roiGroundTruth.push_back(roi_from(r));
            }
            m.entries.push_back(std::move(e));
        }
    } catch (const json::exception& e) {
        throw IoError("malformed manifest " + manifestPath.string() + ": " + e.what());
    }
    return m;
}

Sample load_sample(const DatasetManifest& m, int index)
{
    const ManifestEntry& e = m.entries.at(static_cast<std::size_t>(index));
    Sample s;
    s.sampleId = e.sampleId;
    s.rawCC = read_png(m.root / e.pathCC);
    s.rawMLO = read_png(m.root / e.pathMLO);
    s.report = read_text(m.root / e.reportPath);
    while (!s.report.empty() && (s.report.back() == '\n' || s.report.back() == ' ')) {
        s.report.pop_back();
    }
    s.densityClass = e.densityClass;
    s.biradsLikeLabel = e.biradsLikeLabel;
    s.chestPoint = e.chestPoint;
    s.nipplePoint = e.nipplePoint;
    s.rois = e.roiGroundTruth;
    return s;
}

std::vector<Sample> load_samples(const DatasetManifest& m, const std::vector<int>& indices)
{
    std::vector<Sample> out;
    out.reserve(indices.size());
    for (int i : indices) {
        out.push_back(load_sample(m, i));
    }
    return out;
}

Task parse_task(const std::string& name)
{
    if (name == "birads") {
        return Task::Birads;
    }
    if (name == "density") {
        return Task::Density;
    }
    if (name == "cancerLike" || name == "cancer-like") {
        return Task::CancerLike;
    }
    throw ConfigError("unknown task '" + name + "'");
}

const char* task_name(Task t)
{
    switch (t) {
    case Task::Birads:
        return "birads";
    case Task::Density:
        return "density";
    default:
        return "cancerLike";
    }
}

int class_count(Task t) { return t == Task::Birads ? 3 : (t == Task::Density ? 4 : 2); }

int task_label(const Sample& s, Task t)
{
    switch (t) {
    case Task::Birads:
        return s.biradsLikeLabel;
    case Task::Density:
        return s.densityClass;
    default:
        return s.biradsLikeLabel > 0 ? 1 : 0;
    }
}

int task_label(const ManifestEntry& e, Task t)
{
    switch (t) {
    case Task::Birads:
        return e.biradsLikeLabel;
    case Task::Density:
        return e.densityClass;
    default:
        return e.biradsLikeLabel > 0 ? 1 : 0;
    }
}

}  // namespace glam
