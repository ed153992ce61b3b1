// Acceptance checks, one PASS/FAIL line per criterion.
//
//   acceptance [--cache DIR] [N ...]
//
// Without N every criterion runs. Criteria 5-7 pretrain at desk scale and
// keep datasets and checkpoints under the cache directory; a cached
// checkpoint is reused only when its config hash matches.
#include "fidelity.hpp"
#include "gradcheck.hpp"
#include "metric_check.hpp"
#include "oracles.hpp"

#include "glam/evaluation.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <malloc.h>
#include <map>
#include <set>
#include <sstream>

#include <unistd.h>

using namespace glam;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int precision = 4)
{
    std::ostringstream os;
    os << std::setprecision(precision) << v;
    return os.str();
}

Matrix<double> randn(Index r, Index c, std::mt19937_64& rng)
{
    std::normal_distribution<double> n(0, 1);
    Matrix<double> m(r, c);
    for (Index i = 0; i < m.size(); ++i) {
        m.data()[i] = n(rng);
    }
    return m;
}

double local_value(const Matrix<double>& q, const Matrix<double>& p, int b, int m, double tau, bool spn, bool literal)
{
    Graph<double> g(false);
    LocalLossOptions o;
    o.patientNegatives = spn;
    o.literalEq4 = literal;
    Matrix<double> t(1, 1);
    t(0, 0) = tau;
    return local_nce(g.input(q), g.input(p), b, m, g.input(t), o).item();
}

double rel_err(double a, double ref)
{
    const double diff = std::abs(a - ref);
    return diff == 0.0 ? 0.0 : diff / std::max(std::abs(ref), 1e-300);
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Verdict loss_oracles()
{
    const auto t0 = Clock::now();
    std::mt19937_64 rng(101);
    std::uniform_real_distribution<double> tauDist(0.05, 1.0);
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const int b = 1 + int(rng() % 3);
        const int m = std::array{4, 9, 16}[rng() % 3];
        const int d = 2 + int(rng() % 7);
        const double tau = tauDist(rng);
        const Matrix<double> z = randn(b, d, rng), zt = randn(b, d, rng), t = randn(b, d, rng);
        worst = std::max(worst, rel_err(info_nce<double>(z, zt, tau), oracle::info_nce(z, zt, tau)));
        worst = std::max(worst, rel_err(global_loss<double>(z, zt, t, tau), oracle::global_loss(z, zt, t, tau)));
        const Matrix<double> q = randn(2 * b * m, d, rng), p = randn(2 * b * m, d, rng);
        for (bool literal : {false, true}) {
            for (bool spn : {true, false}) {
                worst = std::max(worst, rel_err(local_value(q, p, b, m, tau, spn, literal),
                                                oracle::local_loss(q, p, b, m, tau, spn, literal)));
            }
        }
    }
    const double secs = seconds_since(t0);
    return {worst <= 1e-6 && secs < 60,
            "100 instances, worst relative error " + fmt(worst, 3) + ", " + fmt(secs, 3) + " s"};
}

Verdict closed_forms()
{
    std::mt19937_64 rng(7);
    double worst = 0;
    for (int trial = 0; trial < 10; ++trial) {
        worst = std::max(worst, std::abs(info_nce<double>(randn(1, 6, rng), randn(1, 6, rng), 0.07)));
    }
    for (int b = 2; b <= 16; ++b) {
        const Matrix<double> z = Matrix<double>::Ones(b, 5);
        worst = std::max(worst, std::abs(info_nce<double>(z, z, 0.07) - std::log(double(b))));
    }
    for (int b : {1, 2, 3, 8}) {
        for (int m : {4, 16, 64}) {
            const Matrix<double> q = Matrix<double>::Ones(2 * b * m, 3);
            worst = std::max(worst, std::abs(local_value(q, q, b, m, 0.07, true, false) - std::log(double(m + b - 1))));
            worst = std::max(worst, std::abs(local_value(q, q, b, m, 0.07, false, false) - std::log(double(m))));
        }
    }
    return {worst <= 1e-9, "worst absolute deviation " + fmt(worst, 3)};
}

Verdict gradients()
{
    const auto t0 = Clock::now();
    const gradcheck::Result r = gradcheck::run(1);
    const double secs = seconds_since(t0);
    bool groups = true;
    std::string detail;
    for (const char* g : {"vision", "text", "saa", "xattn", "tau"}) {
        const auto it = r.groups.find(g);
        const bool ok = it != r.groups.end() && it->second.checked > 0;
        groups = groups && ok;
        detail += std::string(g) + " " + (ok ? std::to_string(it->second.passed) + "/" +
                                                   std::to_string(it->second.checked)
                                             : "missing") + ", ";
    }
    return {groups && r.passRate() >= 0.99 && secs < 300,
            detail + "overall " + fmt(100 * r.passRate(), 5) + "% of " + std::to_string(r.checked) + " coordinates, " +
                fmt(secs, 3) + " s"};
}

Verdict negatives()
{
    long checked = 0;
    int bad = 0;
    for (int m : {16, 64}) {
        for (int b : {1, 2, 8}) {
            std::mt19937_64 rng(std::uint64_t(m * 10 + b));
            const Matrix<double> pos = randn(b * m, 3, rng);
            const int side = int(std::lround(std::sqrt(double(m))));
            for (int s = 0; s < b; ++s) {
                for (int k = 0; k < m; ++k) {
                    ++checked;
                    const auto set = build_negative_set(pos, b, m, k / side, k % side, s);
                    std::set<std::pair<int, int>> got;
                    int position = 0, patient = 0;
                    for (std::size_t r = 0; r < set.refs.size(); ++r) {
                        const auto& ref = set.refs[r];
                        got.insert({ref.sample, ref.position});
                        ref.source == NegativeSource::Position ? ++position : ++patient;
                        if (set.candidates.row(Index(r)) != pos.row(ref.sample * m + ref.position)) {
                            ++bad;
                        }
                    }
                    std::set<std::pair<int, int>> expect;
                    for (int bb = 0; bb < b; ++bb) {
                        for (int kk = 0; kk < m; ++kk) {
                            if ((bb == s && kk != k) || (bb != s && kk == k)) {
                                expect.insert({bb, kk});
                            }
                        }
                    }
                    bad += int(set.refs.size()) != m + b - 2 || got.size() != set.refs.size() || got != expect ||
                           position != m - 1 || patient != b - 1;
                }
            }
        }
    }
    return {bad == 0, std::to_string(checked) + " (sample, i, j) queries enumerated, " + std::to_string(bad) + " mismatches"};
}

Verdict preprocessing()
{
    const auto t0 = Clock::now();
    const fidelity::Result r = fidelity::run(200);
    const double secs = seconds_since(t0);
    const double agree = r.rois ? double(r.roisAgree) / r.rois : 0.0;
    return {r.images == 200 && r.noLine == 0 && r.minIoU >= 0.95 && agree >= 0.99 && secs < 120,
            std::to_string(r.images) + " MLO images, min IoU " + fmt(r.minIoU) + " (mean " + fmt(r.meanIoU) +
                ", " + std::to_string(r.noLine) + " without a line), AP agreement " + std::to_string(r.roisAgree) +
                "/" + std::to_string(r.rois) + ", " + fmt(secs, 3) + " s"};
}

Verdict metrics()
{
    const auto t0 = Clock::now();
    const metric_check::Result r = metric_check::run(1000, 99);
    const double secs = seconds_since(t0);
    return {r.instances == 1000 && r.mismatches == 0 && secs < 60,
            std::to_string(r.instances) + " instances, " + std::to_string(r.mismatches) + " mismatches, " +
                fmt(secs, 3) + " s"};
}

std::string report_bits(const std::vector<EvalReport>& reports)
{
    std::string out;
    for (const auto& r : reports) {
        out += eval_csv_row(r);
        for (double v : {r.bACC, r.AUC, r.fraction}) {
            char bytes[sizeof(double)];
            std::memcpy(bytes, &v, sizeof v);
            out.append(bytes, sizeof bytes);
        }
        out += '\n';
    }
    return out;
}

Verdict determinism()
{
    const fs::path root = fs::temp_directory_path() / ("glam_accept_det_" + std::to_string(::getpid()));
    fs::remove_all(root);
    RunConfig cfg;
    cfg.seed = 17;
    cfg.data.count = 60;
    cfg.training.steps = 10;
    cfg.eval.probe.steps = 50;
    cfg.eval.fineTune.steps = 5;
    struct Trace {
        std::string manifest, losses, checkpoint, reports;
    };
    std::vector<Trace> traces;
    for (int k = 0; k < 2; ++k) {
        const fs::path dir = root / std::to_string(k);
        const DatasetManifest man = build_dataset(cfg, dir / "data");
        const PretrainResult res = pretrain(man, cfg, {dir / "pretrain"});
        const EvalData data = load_eval_data(man, cfg);
        std::vector<EvalReport> reports;
        for (ViewMode v : {ViewMode::Single, ViewMode::Multi}) {
            reports.push_back(evaluate(res.checkpoint.params, cfg, data, Task::Birads, Setting::ZeroShot, 1.0, v));
        }
        reports.push_back(
            evaluate(res.checkpoint.params, cfg, data, Task::Density, Setting::LinearProbe, 0.1, ViewMode::Single));
        reports.push_back(
            evaluate(res.checkpoint.params, cfg, data, Task::Birads, Setting::FineTune, 1.0, ViewMode::Multi));
        traces.push_back({slurp(dir / "data" / "manifest.json"), slurp(dir / "pretrain" / "loss.csv"),
                          slurp(dir / "pretrain" / "checkpoint.bin"), report_bits(reports)});
    }
    fs::remove_all(root);
    const Trace &a = traces[0], &b = traces[1];
    const bool ok = !a.manifest.empty() && !a.losses.empty() && a.manifest == b.manifest && a.losses == b.losses &&
                    a.checkpoint == b.checkpoint && a.reports == b.reports;
    return {ok, std::string("manifest ") + (a.manifest == b.manifest ? "same" : "differs") + ", loss.csv " +
                    (a.losses == b.losses ? "same" : "differs") + ", checkpoint " +
                    (a.checkpoint == b.checkpoint ? "same" : "differs") + ", 4 eval reports " +
                    (a.reports == b.reports ? "same" : "differ")};
}

// Desk-scale runs shared by criteria 5-7.

struct DeskRun {
    ParameterSet<float> params;
    double seconds = 0;
    bool cached = false;
};

DatasetManifest cached_dataset(const RunConfig& cfg, const fs::path& dir)
{
    const fs::path m = dir / "manifest.json";
    if (fs::exists(m)) {
        DatasetManifest man = load_manifest(m);
        if (man.generatorConfigHash == generator_hash(cfg)) {
            return man;
        }
        fs::remove_all(dir);
    }
    std::cerr << "generating " << dir.string() << '\n';
    return build_dataset(cfg, dir);
}

DeskRun cached_pretrain(const DatasetManifest& man, const RunConfig& cfg, const fs::path& dir)
{
    const fs::path ckPath = dir / "checkpoint.bin";
    const fs::path timePath = dir / "seconds.txt";
    if (fs::exists(ckPath) && fs::exists(timePath)) {
        Checkpoint ck = load_checkpoint(ckPath);
        if (ck.configHash == config_hash(cfg) && ck.step == std::uint64_t(cfg.training.steps)) {
            DeskRun r{std::move(ck.params), 0, true};
            std::ifstream(timePath) >> r.seconds;
            return r;
        }
    }
    fs::remove_all(dir);
    std::cerr << "pretraining " << dir.string() << " (" << cfg.training.steps << " steps)\n";
    const auto t0 = Clock::now();
    PretrainOptions opts;
    opts.outDir = dir;
    const int every = std::max(1, cfg.training.steps / 10);
    opts.onStep = [&](int s, const LossBreakdown<float>& l) {
        if (s % every == 0) {
            std::cerr << "  step " << s << " total " << l.total << '\n';
        }
    };
    PretrainResult res = pretrain(man, cfg, opts);
    DeskRun r{std::move(res.checkpoint.params), seconds_since(t0), false};
    std::ofstream(timePath) << std::setprecision(10) << r.seconds << '\n';
    return r;
}

std::string run_note(const DeskRun& r)
{
    return fmt(r.seconds, 4) + " s" + (r.cached ? " (cached checkpoint)" : "");
}

std::string loc_note(const LocalizationStats& s)
{
    return "hit " + fmt(s.hitRate) + " (" + std::to_string(s.hits) + "/" + std::to_string(s.queries) +
           "), uniformity p " + fmt(s.pValue, 3);
}

// Hit rate significantly above chance, one-sided binomial z test at 0.01.
bool above_chance(const LocalizationStats& s)
{
    const double n = s.queries, c = s.chance;
    return s.hits > n * c + 2.326 * std::sqrt(n * c * (1 - c));
}

class Desk {
public:
    explicit Desk(fs::path cache) : cache_(std::move(cache)) {}

    const DatasetManifest& manifest(std::uint64_t seed)
    {
        auto it = manifests_.find(seed);
        if (it == manifests_.end()) {
            it = manifests_.emplace(seed, cached_dataset(config(seed), cache_ / ("data_s" + std::to_string(seed))))
                     .first;
        }
        return it->second;
    }

    const EvalData& data(std::uint64_t seed)
    {
        auto it = data_.find(seed);
        if (it == data_.end()) {
            it = data_.emplace(seed, load_eval_data(manifest(seed), config(seed))).first;
        }
        return it->second;
    }

    const DeskRun& run(std::uint64_t seed, bool gla)
    {
        const std::string name = std::string(gla ? "full" : "glaoff") + "_s" + std::to_string(seed);
        auto it = runs_.find(name);
        if (it == runs_.end()) {
            RunConfig c = config(seed);
            c.model.alignment.gla = gla;
            it = runs_.emplace(name, cached_pretrain(manifest(seed), c, cache_ / name)).first;
        }
        return it->second;
    }

    static RunConfig config(std::uint64_t seed)
    {
        RunConfig c;
        c.seed = seed;
        return c;
    }

private:
    fs::path cache_;
    std::map<std::uint64_t, DatasetManifest> manifests_;
    std::map<std::uint64_t, EvalData> data_;
    std::map<std::string, DeskRun> runs_;
};

Verdict localization_claim(Desk& desk)
{
    const RunConfig cfg = Desk::config(0);
    const auto& test = desk.data(0).test;
    const LocalizationStats untrained = evaluate_localization(initial_parameters(cfg), cfg, test);
    const DeskRun& run = desk.run(0, true);
    const LocalizationStats trained = evaluate_localization(run.params, cfg, test);
    const bool trainedPasses = trained.beatsChance(3.0);
    const bool untrainedFails = !untrained.beatsChance(3.0) && !untrained.uniformRejected(0.01);
    return {trainedPasses && untrainedFails && run.seconds <= 1800,
            "M " + std::to_string(cfg.model.alignment.m) + ", chance " + fmt(trained.chance) + ", target " +
                fmt(3 * trained.chance) + "; trained " + loc_note(trained) + "; untrained " + loc_note(untrained) +
                "; pretrain " + run_note(run)};
}

Verdict multi_view_trend(Desk& desk)
{
    double sum = 0;
    std::string detail;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const RunConfig cfg = Desk::config(seed);
        const DeskRun& run = desk.run(seed, true);
        const EvalData& data = desk.data(seed);
        const double single =
            evaluate(run.params, cfg, data, Task::Birads, Setting::ZeroShot, 1.0, ViewMode::Single).bACC;
        const double multi =
            evaluate(run.params, cfg, data, Task::Birads, Setting::ZeroShot, 1.0, ViewMode::Multi).bACC;
        sum += multi - single;
        detail += "seed " + std::to_string(seed) + " single " + fmt(single) + " multi " + fmt(multi) + "; ";
    }
    const double mean = sum / 5;
    return {mean >= 0, detail + "mean difference " + fmt(mean)};
}

Verdict ablation_direction(Desk& desk)
{
    RunConfig cfg = Desk::config(0);
    const auto& test = desk.data(0).test;
    const DeskRun& full = desk.run(0, true);
    const DeskRun& off = desk.run(0, false);
    const LocalizationStats a = evaluate_localization(full.params, cfg, test);
    cfg.model.alignment.gla = false;
    const LocalizationStats b = evaluate_localization(off.params, cfg, test);
    const double total = full.seconds + off.seconds;
    return {a.beatsChance(3.0) && !above_chance(b) && total <= 3600,
            "full " + loc_note(a) + "; GLA off " + loc_note(b) + " (chance " + fmt(b.chance) +
                "); pretrain total " + fmt(total, 4) + " s" + (full.cached || off.cached ? " (cached)" : "")};
}

}  // namespace

int main(int argc, char** argv)
{
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);

    fs::path cache = fs::current_path() / "acceptance_cache";
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--cache" && i + 1 < argc) {
            cache = argv[++i];
        } else {
            wanted.insert(std::stoi(a));
        }
    }
    if (wanted.empty()) {
        wanted = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    }

    Desk desk(cache);
    const std::map<int, std::function<Verdict()>> checks{
        {1, loss_oracles},
        {2, closed_forms},
        {3, gradients},
        {4, negatives},
        {5, [&desk] { return localization_claim(desk); }},
        {6, [&desk] { return multi_view_trend(desk); }},
        {7, [&desk] { return ablation_direction(desk); }},
        {8, preprocessing},
        {9, metrics},
        {10, determinism},
    };
    int failures = 0;
    for (int n : wanted) {
        const auto it = checks.find(n);
        if (it == checks.end()) {
            std::cerr << "unknown criterion " << n << '\n';
            return 2;
        }
        Verdict v;
        try {
            v = it->second();
        } catch (const std::exception& e) {
            v = {false, std::string("threw: ") + e.what()};
        }
        failures += !v.pass;
        std::cout << "criterion " << n << ": " << (v.pass ? "PASS" : "FAIL") << "  " << v.detail << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
