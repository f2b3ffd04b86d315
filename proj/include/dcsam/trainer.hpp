#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dcsam/episodes.hpp"
#include "dcsam/metrics.hpp"
#include "dcsam/pipeline.hpp"

namespace dcsam {

struct TrainConfig {
    double lr = 1e-3;
    std::size_t steps = 500;
    std::size_t batch = 4;
    double weight_decay = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 0;
    ModelConfig model;
    Canvas canvas;
    std::size_t eval_episodes = 200;  // per held-out class
    std::uint64_t eval_seed = 1000;
    std::size_t tube_finetune_steps = 0;  // extra steps on mask tubes after image training
    std::size_t tube_frames = 4;
};

/// Keys that every config file must set.
const std::vector<std::string>& required_config_keys();

/// Parses `key = value` text. Unknown keys, malformed values and missing
/// required keys raise ConfigError naming the key.
TrainConfig parse_train_config(const std::string& text);
/// Canonical text form; parse_train_config(format_train_config(c)) == c.
std::string format_train_config(const TrainConfig& config);
void validate(const TrainConfig& config);

/// Applies a comma-separated ablation list: no-cyc, no-neg, no-sam, no-prior.
void apply_ablations(TrainConfig& config, const std::string& flags);

/// lr · ½(1 + cos(π t / steps)).
double cosine_lr(double base_lr, std::size_t step, std::size_t total_steps);

struct AdamState {
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;
    std::size_t step = 0;
};

/// One decoupled-weight-decay Adam update at learning rate `lr`:
/// p ← p(1 − lr·wd) − lr·m̂/(√v̂ + ε).
void adamw_step(ModelParams& params, const std::map<std::string, Tensor>& grads, AdamState& state,
                double lr, const TrainConfig& config);

/// Mean total loss over a batch of episodes plus its summed-then-averaged
/// gradients. Episodes are processed in parallel and reduced in index order.
struct BatchResult {
    double loss = 0.0;
    std::map<std::string, Tensor> grads;
};
BatchResult batch_gradients(const ModelParams& params, const std::vector<Episode>& episodes,
                            const StubEncoder& encoder, const ModelConfig& config);
/// Same, for tube episodes: prompts from frame 0, loss averaged over frames.
BatchResult tube_gradients(const ModelParams& params, const std::vector<Episode>& supports,
                           const std::vector<MaskTube>& tubes, const StubEncoder& encoder,
                           const ModelConfig& config);

/// Episode drawn for batch slot `slot` of step `step`.
Episode training_episode(const TrainConfig& config, const FoldSplit& fold, std::size_t step,
                         std::size_t slot);

struct TrainResult {
    ModelParams params;
    std::vector<double> loss_curve;  // image steps, then tube steps
    AdamState optimizer;
};

/// Parameters are initialised from derive_seed(seed) unless `initial` is given.
TrainResult train(const TrainConfig& config, const FoldSplit& fold,
                  const ModelParams* initial = nullptr);

/// Fixed held-out evaluation set: eval_episodes per test class.
std::vector<Episode> evaluation_episodes(const TrainConfig& config, const FoldSplit& fold);

/// Maps an episode to a binary H×W query prediction.
using Predictor = std::function<Tensor(const Episode&)>;
Predictor model_predictor(const ModelParams& params, const TrainConfig& config);

/// Per-class IoU accumulates intersection and union over all of the class's
/// episodes; J and F are per-episode means.
MetricReport evaluate(const Predictor& predictor, const std::vector<Episode>& episodes,
                      const Canvas& canvas);
MetricReport evaluate(const ModelParams& params, const TrainConfig& config, const FoldSplit& fold);

/// Smoothed curve: mean of the trailing `window` values ending at each step.
std::vector<double> smooth(const std::vector<double>& curve, std::size_t window);

// --- Checkpoints -------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& dir, const ModelParams& params,
                     const TrainConfig& config, std::size_t step);
struct Checkpoint {
    ModelParams params;
    TrainConfig config;
    std::size_t step = 0;
};
/// Throws CheckpointMissing if any file is absent.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

std::string format_loss_curve(const std::vector<double>& curve);

}  // namespace dcsam
