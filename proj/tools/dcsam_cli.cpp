// dcsam: episode generation, training, evaluation, tube inference and oracle checks.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dcsam/dcst.hpp"
#include "dcsam/episodes.hpp"
#include "dcsam/errors.hpp"
#include "dcsam/metrics.hpp"
#include "dcsam/oracles.hpp"
#include "dcsam/rng.hpp"
#include "dcsam/trainer.hpp"
#include "dcsam/video.hpp"

#ifndef DCSAM_VERSION
#define DCSAM_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using namespace dcsam;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitNumerical = 2;
constexpr int kExitIo = 3;

std::string utc_now()
{
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void ensure_dir(const fs::path& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

/// Collected while a command runs and written once, atomically, at the end.
struct Manifest {
    std::string command;
    std::string config;
    std::uint64_t seed = 0;
    std::string started = utc_now();
    std::vector<std::string> outputs;

    void write(const fs::path& path) const
    {
        for (const auto& out : outputs)
            if (!fs::exists(out)) throw IoError("manifest lists missing output " + out);
        nlohmann::ordered_json j;
        j["command"] = command;
        j["config"] = config;
        j["seed"] = seed;
        j["version"] = DCSAM_VERSION;
        j["started"] = started;
        j["finished"] = utc_now();
        j["outputs"] = outputs;
        write_file_atomic(path, j.dump(2) + "\n");
    }
};

std::string command_line(int argc, char** argv)
{
    std::string s;
    for (int i = 0; i < argc; ++i) s += (i ? " " : "") + std::string(argv[i]);
    return s;
}

FoldSplit fold_split(int fold) { return split_folds(all_classes(), fold); }

// --- gen ---------------------------------------------------------------------

struct GenArgs {
    int classes = kNumClasses;
    int seeds = 1;
    std::uint64_t seed = 0;
    std::vector<std::size_t> size{24, 24};
    std::string out;
};

void cmd_gen(const GenArgs& a, Manifest& m)
{
    if (a.classes < 1 || a.classes > kNumClasses)
        throw InvalidArgument("--classes must lie in [1, " + std::to_string(kNumClasses) + "]");
    if (a.seeds < 1) throw InvalidArgument("--seeds must be positive");
    const Canvas canvas{a.size.at(0), a.size.at(1)};
    const fs::path root(a.out);
    ensure_dir(root);
    char name[64];
    for (int c = 0; c < a.classes; ++c)
        for (int k = 0; k < a.seeds; ++k) {
            const std::uint64_t s =
                derive_seed(a.seed, {static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(k)});
            std::snprintf(name, sizeof name, "class_%02d/episode_%04d", c, k);
            write_episode_bundle(root / name, gen_episode(c, s, canvas));
            m.outputs.push_back((root / name).string());
        }
    m.seed = a.seed;
    m.config = "classes = " + std::to_string(a.classes) + "\nseeds = " + std::to_string(a.seeds) +
               "\nsize = " + std::to_string(canvas.height) + " " + std::to_string(canvas.width) + "\n";
    std::cout << "wrote " << a.classes * a.seeds << " episodes to " << a.out << "\n";
}

// --- train -------------------------------------------------------------------

struct TrainArgs {
    std::string config;
    int fold = 0;
    std::string out;
    std::string ablate;
};

void cmd_train(const TrainArgs& a, Manifest& m)
{
    TrainConfig config = parse_train_config(read_text_file(a.config));
    apply_ablations(config, a.ablate);
    const FoldSplit fold = fold_split(a.fold);
    const TrainResult r = train(config, fold);

    const fs::path out(a.out);
    save_checkpoint(out, r.params, config, r.loss_curve.size());
    write_file_atomic(out / "loss_curve.csv", format_loss_curve(r.loss_curve));
    r.params.for_each([&](std::string_view name, const Tensor&) {
        m.outputs.push_back((out / (std::string(name) + ".dcst")).string());
    });
    for (const char* f : {"optimizer.txt", "config.txt", "loss_curve.csv"}) m.outputs.push_back((out / f).string());
    m.seed = config.seed;
    m.config = format_train_config(config);
    std::printf("fold %d: %zu steps, loss %.6f -> %.6f\n", a.fold, r.loss_curve.size(), r.loss_curve.front(),
                r.loss_curve.back());
}

// --- eval --------------------------------------------------------------------

struct EvalArgs {
    std::string ckpt;
    int fold = 0;
    std::string out;
    std::size_t episodes = 0;  // 0 keeps the checkpoint's setting
};

void cmd_eval(const EvalArgs& a, Manifest& m)
{
    Checkpoint ck = load_checkpoint(a.ckpt);
    if (a.episodes > 0) ck.config.eval_episodes = a.episodes;
    const MetricReport report = evaluate(ck.params, ck.config, fold_split(a.fold));
    const fs::path out(a.out);
    if (out.has_parent_path()) ensure_dir(out.parent_path());
    write_file_atomic(out, format_report_csv(a.fold, report));
    const fs::path summary = out.string() + ".summary.json";
    write_file_atomic(summary, format_summary_json({{a.fold, report}}) + "\n");
    m.outputs = {out.string(), summary.string()};
    m.seed = ck.config.eval_seed;
    m.config = format_train_config(ck.config);
    std::printf("fold %d: miou %.4f j %.4f f %.4f jf %.4f\n", a.fold, report.miou, report.j, report.f, report.jf);
}

// --- tube --------------------------------------------------------------------

struct TubeArgs {
    std::string ckpt;
    std::string episode;
    std::size_t frames = 8;
    std::uint64_t seed = 0;
    bool translation_only = false;
    std::string out;
};

void cmd_tube(const TubeArgs& a, Manifest& m)
{
    const Checkpoint ck = load_checkpoint(a.ckpt);
    const Episode episode = read_episode_bundle(a.episode);
    TubeMotion motion;
    if (a.translation_only) motion.allow_scale = motion.allow_flip = false;
    const MaskTube truth = make_tube(episode, a.frames, a.seed, motion);
    const StubEncoder encoder(ck.config.model.encoder);
    const MaskTube pred = propagate_first_frame(episode, truth, ck.params, encoder, ck.config.model);
    check_tube(pred);

    const std::size_t tol = default_boundary_tolerance(episode.query_mask.dim(0), episode.query_mask.dim(1));
    const FrameScores scores = per_frame_scores(pred, truth, tol);
    const MetricReport summary = jf_score(pred, truth, tol);
    std::string csv = "frame,j,f\n";
    char line[96];
    for (std::size_t t = 0; t < scores.j.size(); ++t) {
        std::snprintf(line, sizeof line, "%zu,%.17g,%.17g\n", t, scores.j[t], scores.f[t]);
        csv += line;
    }
    std::snprintf(line, sizeof line, "# summary j=%.17g f=%.17g jf=%.17g\n", summary.j, summary.f, summary.jf);
    csv += line;

    const fs::path out(a.out);
    write_tube(out / "predicted", pred);
    write_tube(out / "truth", truth);
    write_file_atomic(out / "frames.csv", csv);
    m.outputs = {(out / "predicted").string(), (out / "truth").string(), (out / "frames.csv").string()};
    m.seed = a.seed;
    m.config = format_train_config(ck.config);
    std::printf("%zu frames: j %.4f f %.4f jf %.4f\n", pred.length(), summary.j, summary.f, summary.jf);
}

// --- oracle ------------------------------------------------------------------

struct OracleArgs {
    std::string suite = "cyc";
    std::size_t trials = 1000;
    std::uint64_t seed = 0;
};

int cmd_oracle(const OracleArgs& a)
{
    oracle::SuiteResult r;
    if (a.suite == "cyc") r = oracle::run_cyc_suite(a.trials, a.seed);
    else if (a.suite == "softmax") r = oracle::run_softmax_suite(a.trials, a.seed);
    else if (a.suite == "grad") r = oracle::run_grad_suite(a.trials, a.seed);
    else throw InvalidArgument("unknown suite '" + a.suite + "'");
    std::printf("%s: %zu/%zu passed (%.2fs)\n", r.name.c_str(), r.passed, r.passed + r.failed, r.seconds);
    if (!r.first_failure.empty()) std::printf("first failure: %s\n", r.first_failure.c_str());
    return r.ok() ? kExitOk : kExitNumerical;
}

int exit_code(const Error& e)
{
    switch (e.category()) {
        case ErrorCategory::kValidation: return kExitValidation;
        case ErrorCategory::kNumerical: return kExitNumerical;
        case ErrorCategory::kIo: return kExitIo;
    }
    return kExitValidation;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"DC-SAM desk-scale in-context segmentation"};
    app.require_subcommand(1);
    app.set_version_flag("--version", DCSAM_VERSION);

    GenArgs gen;
    auto* g = app.add_subcommand("gen", "Write synthetic episode bundles");
    g->add_option("--classes", gen.classes, "Number of classes, starting at 0")->capture_default_str();
    g->add_option("--seeds", gen.seeds, "Episodes per class")->capture_default_str();
    g->add_option("--seed", gen.seed, "Root seed")->capture_default_str();
    g->add_option("--size", gen.size, "Canvas height and width")->expected(2)->capture_default_str();
    g->add_option("--out", gen.out, "Output directory")->required();

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train on three folds, write a checkpoint");
    t->add_option("--config", tr.config, "key = value config file")->required();
    t->add_option("--fold", tr.fold, "Held-out fold index")->capture_default_str();
    t->add_option("--out", tr.out, "Checkpoint directory")->required();
    t->add_option("--ablate", tr.ablate, "Comma list of no-cyc, no-neg, no-sam, no-prior");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on the held-out fold");
    e->add_option("--ckpt", ev.ckpt, "Checkpoint directory")->required();
    e->add_option("--fold", ev.fold, "Held-out fold index")->capture_default_str();
    e->add_option("--out", ev.out, "Report CSV path")->required();
    e->add_option("--episodes", ev.episodes, "Episodes per class (default: from checkpoint config)");

    TubeArgs tu;
    auto* u = app.add_subcommand("tube", "Propagate frame-0 prompts through a mask tube");
    u->add_option("--ckpt", tu.ckpt, "Checkpoint directory")->required();
    u->add_option("--episode", tu.episode, "Episode bundle directory")->required();
    u->add_option("--frames", tu.frames, "Tube length T")->capture_default_str();
    u->add_option("--seed", tu.seed, "Tube motion seed")->capture_default_str();
    u->add_flag("--translation-only", tu.translation_only, "Disable scale and flip");
    u->add_option("--out", tu.out, "Output directory")->required();

    OracleArgs orc;
    auto* o = app.add_subcommand("oracle", "Check kernels against naive oracles");
    o->add_option("--suite", orc.suite, "cyc, softmax or grad")->capture_default_str();
    o->add_option("--trials", orc.trials, "Random instances")->capture_default_str();
    o->add_option("--seed", orc.seed, "Root seed")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? kExitOk : kExitValidation;
    }

    try {
        Manifest manifest;
        manifest.command = command_line(argc, argv);
        if (o->parsed()) return cmd_oracle(orc);
        fs::path manifest_path;
        if (g->parsed()) {
            cmd_gen(gen, manifest);
            manifest_path = fs::path(gen.out) / "manifest.json";
        } else if (t->parsed()) {
            cmd_train(tr, manifest);
            manifest_path = fs::path(tr.out) / "manifest.json";
        } else if (e->parsed()) {
            cmd_eval(ev, manifest);
            manifest_path = ev.out + ".manifest.json";
        } else if (u->parsed()) {
            cmd_tube(tu, manifest);
            manifest_path = fs::path(tu.out) / "manifest.json";
        }
        manifest.write(manifest_path);
        return kExitOk;
    } catch (const Error& err) {
        std::cerr << "error: " << err.what() << "\n";
        return exit_code(err);
    } catch (const fs::filesystem_error& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kExitIo;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kExitValidation;
    }
}
