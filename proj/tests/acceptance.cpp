// One PASS/FAIL line per acceptance criterion. Exit status is non-zero when any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dcsam/attention.hpp"
#include "dcsam/gradcheck.hpp"
#include "dcsam/losses.hpp"
#include "dcsam/metrics.hpp"
#include "dcsam/oracles.hpp"
#include "dcsam/trainer.hpp"
#include "dcsam/video.hpp"

using namespace dcsam;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int id, const char* name, bool ok, const std::string& detail)
{
    if (!ok) ++failures;
    std::printf("[%s] %d %s: %s\n", ok ? "PASS" : "FAIL", id, name, detail.c_str());
    std::fflush(stdout);
}

class Timer {
   public:
    double seconds() const
    {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

   private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, auto... args)
{
    char buf[1024];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

void cycle_oracle()
{
    const oracle::SuiteResult r = oracle::run_cyc_suite(1000, 2024);
    report(1, "cycle-bias oracle", r.ok() && r.passed == 1000 && r.seconds < 5.0,
           fmt("%zu/1000 instances match, %.3f s (limit 5 s)%s", r.passed, r.seconds,
               r.first_failure.empty() ? "" : ("; " + r.first_failure).c_str()));
}

void attention_reduction()
{
    CounterRng rng(31);
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
        const std::size_t d = static_cast<std::size_t>(rng.uniform_int(1, 6));
        const std::size_t n = static_cast<std::size_t>(rng.uniform_int(1, 5));
        const std::size_t hw = static_cast<std::size_t>(rng.uniform_int(1, 12));
        const AttentionBlock block = random_attention(d, rng);
        const Tensor q = rng.normal_tensor({n, d}, 1.0), f = rng.normal_tensor({hw, d}, 1.0);
        const Tensor biased = qcyc_attention(block, q, f, Tensor({hw}, 1.0));
        worst = std::max(worst, max_abs_diff(biased, cross_attention(block, q, f)));
    }
    report(2, "all-foreground attention reduction", worst <= 1e-12,
           fmt("100 instances, max |QCycAttn - cross-attn| = %.3g (limit 1e-12)", worst));
}

ad::Var corrupted_identity(ad::Var x)
{
    return x.tape().record(x.value(), {x}, [](const ad::BackwardContext& c) {
        if (c.input_grads[0]) *c.input_grads[0] = add(*c.input_grads[0], scale(c.grad, 1.5));
    });
}

void gradient_suite()
{
    Timer timer;
    const ModelConfig config;
    const Episode e = gen_episode(5, 3, Canvas{8, 8});
    const ModelParams params = init_params(config, 4);
    const GradCheckReport good = grad_check(params, e, config);
    const GradCheckReport bad = grad_check(params, e, config, {}, corrupted_identity);
    std::size_t tensors = 0;
    params.for_each([&](std::string_view, const Tensor&) { ++tensors; });
    const double seconds = timer.seconds();
    const bool ok = good.passed && good.max_relative_error.size() == tensors && good.worst < 1e-4 &&
                    !bad.passed && seconds < 60.0;
    report(3, "gradient suite", ok,
           fmt("%zu/%zu parameter tensors checked, worst rel. err %.3g (%s), negative control %s "
               "(worst %.3g), %.2f s (limit 60 s)",
               good.max_relative_error.size(), tensors, good.worst, good.worst_parameter.c_str(),
               bad.passed ? "passed (wrong)" : "rejected", bad.worst, seconds));
}

void loss_identities()
{
    const Tensor y = Tensor::matrix({{1, 0}, {1, 1}});
    const double bce = bce_loss(Tensor({2, 2}, 0.5), y);
    const double perfect = dice_loss(y, y);
    const double disjoint = dice_loss(Tensor::vector({1, 1, 0, 0}), Tensor::vector({0, 0, 1, 1}));
    const Tensor p = Tensor::matrix({{0.2, 0.9}, {0.6, 0.3}});
    const bool sum_exact = total_loss(p, y) == bce_loss(p, y) + dice_loss(p, y);
    const bool ok = std::abs(bce - std::log(2.0)) <= 1e-9 && std::abs(perfect) <= 2e-6 &&
                    std::abs(disjoint - 1.0) <= 2e-6 && sum_exact;
    report(4, "loss identities", ok,
           fmt("BCE(0.5) - ln2 = %.3g, Dice(perfect) = %.3g, Dice(disjoint) = %.9f, total == sum: %s",
               bce - std::log(2.0), perfect, disjoint, sum_exact ? "yes" : "no"));
}

void metric_cases()
{
    const double i = iou(Tensor::matrix({{1, 1}, {0, 0}}), Tensor::matrix({{1, 0}, {0, 0}}));
    const std::vector<double> j{0.5, 0.7}, f{0.9, 0.7};
    const MetricReport r = summarize_frames(j, f);
    CounterRng rng(50);
    int symmetric = 0;
    for (int t = 0; t < 50; ++t) {
        Tensor a({9, 9}), b({9, 9});
        for (std::size_t k = 0; k < a.size(); ++k) {
            a[k] = rng.bernoulli(0.4) ? 1.0 : 0.0;
            b[k] = rng.bernoulli(0.4) ? 1.0 : 0.0;
        }
        const std::size_t tol = static_cast<std::size_t>(t % 3);
        if (boundary_f(a, b, tol) == boundary_f(b, a, tol)) ++symmetric;
    }
    const bool ok = i == 0.5 && r.j == 0.6 && r.f == 0.8 && r.jf == 0.7 && symmetric == 50;
    report(5, "metric hand cases", ok,
           fmt("IoU = %.17g, J = %.17g, F = %.17g, J&F = %.17g, boundary_f symmetric on %d/50 pairs", i,
               r.j, r.f, r.jf, symmetric));
}

struct RunResult {
    double baseline = 0.0;
    double trained = 0.0;
    double seconds = 0.0;
    ModelParams params;
};

RunResult train_and_score(TrainConfig config, const std::string& ablate)
{
    if (!ablate.empty()) apply_ablations(config, ablate);
    const FoldSplit fold = split_folds(all_classes(), 0);
    RunResult r;
    r.baseline = evaluate(init_params(config.model, derive_seed(config.seed, {1})), config, fold).miou;
    Timer timer;
    TrainResult t = train(config, fold);
    r.trained = evaluate(t.params, config, fold).miou;
    r.seconds = timer.seconds();
    r.params = std::move(t.params);
    return r;
}

void toy_training(const RunResult& full)
{
    const double gain = full.trained - full.baseline;
    report(6, "toy training", gain >= 0.30 && full.seconds < 300.0,
           fmt("fold 0, 500 steps: trained mIoU %.4f, baseline %.4f, gain %+.4f (need +0.30), train+eval %.1f s "
               "(limit 300 s)",
               full.trained, full.baseline, gain, full.seconds));
}

void ablation(const RunResult& seed0)
{
    double full = 0, no_cyc = 0, no_neg = 0;
    std::string per_seed;
    for (std::uint64_t s = 0; s < 5; ++s) {
        TrainConfig c;
        c.seed = s;
        const double f = s == 0 ? seed0.trained : train_and_score(c, "").trained;
        const double a = train_and_score(c, "no-cyc").trained;
        const double b = train_and_score(c, "no-neg").trained;
        full += f / 5;
        no_cyc += a / 5;
        no_neg += b / 5;
        per_seed += fmt(" seed%llu %.4f/%.4f/%.4f", static_cast<unsigned long long>(s), f, a, b);
        std::printf("    ablation seed %llu: full %.4f no-cyc %.4f no-neg %.4f\n", static_cast<unsigned long long>(s),
                    f, a, b);
        std::fflush(stdout);
    }
    report(7, "directional ablation", full >= no_cyc && full >= no_neg,
           fmt("mean mIoU full %.4f, no-cyc %.4f (delta %+.4f), no-neg %.4f (delta %+.4f);%s", full, no_cyc,
               full - no_cyc, no_neg, full - no_neg, per_seed.c_str()));
}

void tube_coherence(const RunResult& full)
{
    const TrainConfig config;
    const fs::path dir = fs::temp_directory_path() / "dcsam_acceptance_ckpt";
    fs::remove_all(dir);
    save_checkpoint(dir, full.params, config, config.steps);
    const Checkpoint ck = load_checkpoint(dir);
    fs::remove_all(dir);

    const StubEncoder encoder(ck.config.model.encoder);
    const FoldSplit fold = split_folds(all_classes(), 0);
    const std::size_t tol = default_boundary_tolerance(ck.config.canvas.height, ck.config.canvas.width);
    TubeMotion motion;
    motion.allow_scale = motion.allow_flip = false;
    std::vector<double> mean_j(8, 0.0);
    for (int k = 0; k < 20; ++k) {
        const int cls = fold.test_classes[static_cast<std::size_t>(k) % fold.test_classes.size()];
        const std::uint64_t seed = derive_seed(8, {static_cast<std::uint64_t>(k)});
        const Episode e = gen_episode(cls, seed, ck.config.canvas);
        const MaskTube truth = make_tube(e, 8, seed, motion);
        const MaskTube pred = propagate_first_frame(e, truth, ck.params, encoder, ck.config.model);
        const FrameScores s = per_frame_scores(pred, truth, tol);
        for (std::size_t t = 0; t < 8; ++t) mean_j[t] += s.j[t] / 20;
    }
    const double decay = mean_j[0] - mean_j[7];
    report(8, "tube coherence", decay < 0.1,
           fmt("20 tubes, T = 8: mean J frame 0 %.4f, frame 7 %.4f, decay %+.4f (limit 0.1)", mean_j[0], mean_j[7],
               decay));
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void determinism()
{
    const fs::path root = fs::temp_directory_path() / "dcsam_acceptance_det";
    fs::remove_all(root);
    fs::create_directories(root);
    std::ofstream(root / "train.cfg") << "lr = 0.001\nsteps = 30\nbatch = 4\nseed = 7\n";
    std::vector<fs::path> outs{root / "a", root / "b"};
    for (const fs::path& out : outs) {
        const std::string cmd = std::string("\"") + DCSAM_CLI + "\" train --config \"" + (root / "train.cfg").string() +
                                "\" --fold 0 --out \"" + out.string() + "\" > /dev/null";
        if (std::system(cmd.c_str()) != 0) {
            report(9, "determinism", false, "cmd_train failed: " + cmd);
            return;
        }
    }
    std::size_t compared = 0;
    std::string mismatch;
    for (const auto& entry : fs::directory_iterator(outs[0])) {
        const std::string name = entry.path().filename().string();
        if (name == "manifest.json") continue;
        ++compared;
        if (!fs::exists(outs[1] / name) || slurp(entry.path()) != slurp(outs[1] / name)) mismatch += " " + name;
    }
    std::size_t other = 0;
    for (const auto& entry : fs::directory_iterator(outs[1]))
        if (entry.path().filename() != "manifest.json") ++other;
    const bool curve = fs::exists(outs[0] / "loss_curve.csv");
    fs::remove_all(root);
    report(9, "determinism", mismatch.empty() && other == compared && curve && compared > 2,
           fmt("two cmd_train runs, %zu files compared bytewise (manifest timestamps excluded)%s", compared,
               mismatch.empty() ? "" : ("; differ:" + mismatch).c_str()));
}

}  // namespace

int main()
{
    cycle_oracle();
    attention_reduction();
    gradient_suite();
    loss_identities();
    metric_cases();
    const RunResult full = train_and_score(TrainConfig{}, "");
    toy_training(full);
    ablation(full);
    tube_coherence(full);
    determinism();
    std::printf("%d of 9 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
