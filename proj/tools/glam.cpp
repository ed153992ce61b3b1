#include "glam/evaluation.hpp"
#include "glam/image.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <malloc.h>
#include <optional>

namespace fs = std::filesystem;
using namespace glam;

namespace {

enum Exit { kOk = 0, kConfig = 2, kIo = 3, kOverwrite = 4, kNonFinite = 5, kNoCheckpoint = 6 };

struct Overwrite : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MissingCheckpoint : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool force = false;
    std::optional<int> steps;
    std::string preset;
    std::string task = "birads";
    std::string setting = "zero-shot";
    std::optional<double> fraction;
    std::string view = "single";
    std::string sampleId;
    std::string checkpoint;
    std::vector<int> query;
};

RunConfig resolve_config(const Options& o)
{
    RunConfig cfg = o.config.empty() ? RunConfig{} : load_run_config(o.config);
    if (o.seed) {
        cfg.seed = *o.seed;
    }
    if (!o.out.empty()) {
        cfg.outDir = o.out;
    }
    if (o.steps) {
        cfg.training.steps = *o.steps;
    }
    cfg.validate();
    return cfg;
}

fs::path data_dir(const RunConfig& cfg) { return fs::path(cfg.outDir) / "data"; }
fs::path pretrain_dir(const RunConfig& cfg) { return fs::path(cfg.outDir) / "pretrain"; }

void guard(const fs::path& p, bool force)
{
    if (!fs::exists(p)) {
        return;
    }
    if (!force) {
        throw Overwrite(p.string() + " exists; pass --force to overwrite");
    }
    fs::remove_all(p);
}

DatasetManifest manifest_for(const RunConfig& cfg)
{
    const fs::path m = data_dir(cfg) / "manifest.json";
    if (!fs::exists(m)) {
        throw IoError("no dataset at " + m.string() + "; run generate first");
    }
    return load_manifest(m);
}

Checkpoint checkpoint_for(const RunConfig& cfg, const Options& o)
{
    const fs::path p = o.checkpoint.empty() ? pretrain_dir(cfg) / "checkpoint.bin" : fs::path(o.checkpoint);
    if (!fs::exists(p)) {
        throw MissingCheckpoint("checkpoint not found: " + p.string());
    }
    Checkpoint ck = load_checkpoint(p);
    if (ck.modelHash != model_hash(cfg.model)) {
        throw ConfigError("checkpoint " + p.string() + " was trained with a different encoder/alignment config");
    }
    return ck;
}

void print_losses(const LossBreakdown<float>& l)
{
    std::cout << "globalMV " << l.globalMV << "  globalIT " << l.globalIT << "  local " << l.local << "  total "
              << l.total << "  tau " << l.tau << '\n';
}

int cmd_generate(const Options& o)
{
    const RunConfig cfg = resolve_config(o);
    const fs::path dir = data_dir(cfg);
    guard(dir, o.force);
    const DatasetManifest m = build_dataset(cfg, dir);
    std::cout << "manifest " << (dir / "manifest.json").string() << '\n'
              << "train " << m.indices(Split::Train).size() << "  val " << m.indices(Split::Val).size() << "  test "
              << m.indices(Split::Test).size() << '\n';
    return kOk;
}

int cmd_pretrain(const Options& o)
{
    if (o.preset == "paper") {
        const TrainConfig t = TrainConfig::paperPreset();
        std::cout << "paper preset (recorded, not run at desk scale):\n"
                  << "  batchSize " << t.batchSize << "\n  steps " << t.steps << "\n  lr " << t.lr
                  << "\n  weightDecay " << t.weightDecay << "\n  optimizer " << t.optimizer << " (momentum "
                  << t.momentum << ")\n  alignment M grid 16 / 81 / 324\n";
        return kOk;
    }
    if (!o.preset.empty() && o.preset != "desk") {
        throw ConfigError("--preset must be desk or paper");
    }
    const RunConfig cfg = resolve_config(o);
    const DatasetManifest m = manifest_for(cfg);
    const fs::path dir = pretrain_dir(cfg);
    guard(dir, o.force);
    PretrainOptions opts;
    opts.outDir = dir;
    const int every = std::max(1, cfg.training.steps / 20);
    opts.onStep = [&](int step, const LossBreakdown<float>& l) {
        if (step % every == 0) {
            std::cout << "step " << step << "  total " << l.total << '\n' << std::flush;
        }
    };
    const PretrainResult r = pretrain(m, cfg, opts);
    std::cout << "checkpoint " << (dir / "checkpoint.bin").string() << '\n';
    if (!r.losses.empty()) {
        print_losses(r.losses.back());
    }
    return kOk;
}

void append_result(const fs::path& path, const EvalReport& r)
{
    const bool fresh = !fs::exists(path);
    std::ofstream os(path, std::ios::app);
    if (!os) {
        throw IoError("cannot write " + path.string());
    }
    if (fresh) {
        os << eval_csv_header() << '\n';
    }
    os << eval_csv_row(r) << '\n';
}

int cmd_eval(const Options& o)
{
    const RunConfig cfg = resolve_config(o);
    const Task task = parse_task(o.task);
    const Setting setting = parse_setting(o.setting);
    const ViewMode mode = parse_view_mode(o.view);
    if (o.fraction && setting != Setting::LinearProbe) {
        throw ConfigError("--fraction applies to the linear-probe setting only");
    }
    const double fraction = o.fraction.value_or(1.0);
    const Checkpoint ck = checkpoint_for(cfg, o);
    const DatasetManifest m = manifest_for(cfg);
    const EvalData data = load_eval_data(m, cfg);
    const EvalReport r = evaluate(ck.params, cfg, data, task, setting, fraction, mode);
    const fs::path results = fs::path(cfg.outDir) / "results.csv";
    append_result(results, r);
    std::cout << eval_csv_header() << '\n' << eval_csv_row(r) << '\n';
    return kOk;
}

int cmd_ablate(const Options& o)
{
    const RunConfig cfg = resolve_config(o);
    const DatasetManifest m = manifest_for(cfg);
    const fs::path dir = fs::path(cfg.outDir) / "ablation";
    guard(dir, o.force);
    fs::create_directories(dir);
    const auto rows = run_ablation(m, cfg, dir);
    std::ofstream os(dir / "table.csv");
    if (!os) {
        throw IoError("cannot write " + (dir / "table.csv").string());
    }
    os << "# config " << config_hash(cfg) << '\n' << ablation_csv(rows);
    std::cout << ablation_csv(rows);
    return kOk;
}

int cmd_attn(const Options& o)
{
    const RunConfig cfg = resolve_config(o);
    const Checkpoint ck = checkpoint_for(cfg, o);
    const DatasetManifest m = manifest_for(cfg);
    int index = -1;
    for (std::size_t i = 0; i < m.entries.size(); ++i) {
        if (m.entries[i].sampleId == o.sampleId) {
            index = static_cast<int>(i);
        }
    }
    if (index < 0) {
        throw ConfigError("unknown sample id " + o.sampleId);
    }
    const PreparedSample s = prepare_sample(load_sample(m, index), cfg.preprocess);
    std::vector<AttentionMap> maps;
    if (!o.query.empty()) {
        if (o.query.size() != 2) {
            throw ConfigError("--query takes two integers: row col");
        }
        maps = attention_maps(ck.params, cfg, s,
                              {{View::CC, o.query[0], o.query[1]}, {View::MLO, o.query[0], o.query[1]}});
    } else {
        if (s.rois.empty()) {
            throw ConfigError("sample " + o.sampleId + " has no ROI; pass --query row col");
        }
        maps = roi_attention_maps(ck.params, cfg, s);
    }
    const fs::path dir = fs::path(cfg.outDir) / "attn";
    fs::create_directories(dir);
    const ViewPairImages images = eval_images(s, cfg.preprocess);
    const fs::path csvPath = dir / (o.sampleId + "_weights.csv");
    if (fs::exists(csvPath) && !o.force) {
        throw Overwrite(csvPath.string() + " exists; pass --force to overwrite");
    }
    std::ofstream csv(csvPath);
    if (!csv) {
        throw IoError("cannot write " + csvPath.string());
    }
    csv << "# config " << config_hash(cfg) << '\n' << "sampleId,queryView,row,col,argmaxRow,groundTruthRow";
    for (int i = 0; i < cfg.model.alignment.side(); ++i) {
        csv << ",w" << i;
    }
    csv << '\n' << std::setprecision(9);
    std::vector<fs::path> files{csvPath};
    for (std::size_t k = 0; k < maps.size(); ++k) {
        const AttentionMap& a = maps[k];
        const char* dirName = a.query.view == View::CC ? "cc2mlo" : "mlo2cc";
        const fs::path png = dir / (o.sampleId + "_q" + std::to_string(k / 2) + "_" + dirName + ".png");
        write_attention_overlay(png, images, a, cfg.model);
        files.push_back(png);
        csv << a.sampleId << ',' << (a.query.view == View::CC ? "cc" : "mlo") << ',' << a.query.row << ','
            << a.query.col << ',' << a.argmaxRow << ',' << a.groundTruthRow;
        for (double w : a.weights) {
            csv << ',' << w;
        }
        csv << '\n';
    }
    for (const auto& f : files) {
        std::cout << f.string() << '\n';
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv)
{
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);

    CLI::App app{"Geometry-guided multi-view visual-language pretraining on synthetic phantoms"};
    app.require_subcommand(1);
    Options o;
    std::uint64_t seed = 0;
    app.add_option("--config", o.config, "run config (JSON)");
    auto* seedOpt = app.add_option("--seed", seed, "override the run seed");
    app.add_option("--out", o.out, "override the output directory");
    app.add_flag("--force", o.force, "overwrite existing outputs");

    auto* gen = app.add_subcommand("generate", "build the synthetic dataset");
    auto* pre = app.add_subcommand("pretrain", "run pretraining");
    int steps = 0;
    auto* stepsOpt = pre->add_option("--steps", steps, "override training.steps");
    pre->add_option("--preset", o.preset, "desk (default) or paper (print only)");
    auto* ev = app.add_subcommand("eval", "downstream evaluation");
    ev->add_option("--task", o.task, "birads | density | cancerLike");
    ev->add_option("--setting", o.setting, "zero-shot | linear-probe | fine-tune");
    double fraction = 1.0;
    auto* fracOpt = ev->add_option("--fraction", fraction, "linear-probe data fraction: 0.01 | 0.1 | 1.0");
    ev->add_option("--view", o.view, "single | multi");
    ev->add_option("--checkpoint", o.checkpoint, "checkpoint path (default <out>/pretrain/checkpoint.bin)");
    auto* abl = app.add_subcommand("ablate", "pretrain and evaluate every ablation row");
    int ablSteps = 0;
    auto* ablStepsOpt = abl->add_option("--steps", ablSteps, "override training.steps per row");
    auto* attn = app.add_subcommand("attn", "export cross-view attention maps for one sample");
    attn->add_option("--sample-id", o.sampleId, "sample id from the manifest")->required();
    attn->add_option("--query", o.query, "explicit query super-patch: row col")->expected(2);
    attn->add_option("--checkpoint", o.checkpoint, "checkpoint path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }
    if (*seedOpt) {
        o.seed = seed;
    }
    if (*stepsOpt) {
        o.steps = steps;
    }
    if (*ablStepsOpt) {
        o.steps = ablSteps;
    }
    if (*fracOpt) {
        o.fraction = fraction;
    }

    try {
        if (*gen) {
            return cmd_generate(o);
        }
        if (*pre) {
            return cmd_pretrain(o);
        }
        if (*ev) {
            return cmd_eval(o);
        }
        if (*abl) {
            return cmd_ablate(o);
        }
        return cmd_attn(o);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const Overwrite& e) {
        std::cerr << "refusing to overwrite: " << e.what() << '\n';
        return kOverwrite;
    } catch (const NonFiniteLoss& e) {
        std::cerr << "aborted: " << e.what() << '\n';
        return kNonFinite;
    } catch (const MissingCheckpoint& e) {
        std::cerr << e.what() << '\n';
        return kNoCheckpoint;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return kIo;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return kIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
