#include "dcsam/trainer.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numbers>
#include <set>
#include <sstream>

#include "dcsam/dcst.hpp"
#include "dcsam/errors.hpp"
#include "dcsam/losses.hpp"
#include "dcsam/parallel.hpp"
#include "dcsam/rng.hpp"

namespace dcsam {
namespace {

// Stream tags for derive_seed so that no two consumers share a sequence.
constexpr std::uint64_t kInitTag = 0x1;
constexpr std::uint64_t kImageTag = 0x2;
constexpr std::uint64_t kTubeTag = 0x3;

std::string format_double(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double parse_double(const std::string& key, const std::string& value)
{
    double out = 0.0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || ptr != value.data() + value.size() || !std::isfinite(out))
        throw ConfigError("key '" + key + "': expected a number, got '" + value + "'");
    return out;
}

std::uint64_t parse_unsigned(const std::string& key, const std::string& value)
{
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || ptr != value.data() + value.size())
        throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + value + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& value)
{
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError("key '" + key + "': expected true or false, got '" + value + "'");
}

// One table drives parsing and formatting so the two cannot drift apart.
struct Field {
    const char* key;
    std::function<void(TrainConfig&, const std::string&, const std::string&)> set;
    std::function<std::string(const TrainConfig&)> get;
};

template <typename Member>
Field real(const char* key, Member member)
{
    return {key, [member](TrainConfig& c, const std::string& k, const std::string& v) { member(c) = parse_double(k, v); },
            [member](const TrainConfig& c) { return format_double(member(const_cast<TrainConfig&>(c))); }};
}

template <typename Member>
Field integer(const char* key, Member member)
{
    return {key,
            [member](TrainConfig& c, const std::string& k, const std::string& v) {
                member(c) = static_cast<std::remove_reference_t<decltype(member(c))>>(parse_unsigned(k, v));
            },
            [member](const TrainConfig& c) { return std::to_string(member(const_cast<TrainConfig&>(c))); }};
}

template <typename Member>
Field flag(const char* key, Member member)
{
    return {key, [member](TrainConfig& c, const std::string& k, const std::string& v) { member(c) = parse_bool(k, v); },
            [member](const TrainConfig& c) { return std::string(member(const_cast<TrainConfig&>(c)) ? "true" : "false"); }};
}

const std::vector<Field>& fields()
{
    static const std::vector<Field> table = {
        real("lr", [](TrainConfig& c) -> double& { return c.lr; }),
        integer("steps", [](TrainConfig& c) -> std::size_t& { return c.steps; }),
        integer("batch", [](TrainConfig& c) -> std::size_t& { return c.batch; }),
        integer("seed", [](TrainConfig& c) -> std::uint64_t& { return c.seed; }),
        real("weight_decay", [](TrainConfig& c) -> double& { return c.weight_decay; }),
        real("beta1", [](TrainConfig& c) -> double& { return c.beta1; }),
        real("beta2", [](TrainConfig& c) -> double& { return c.beta2; }),
        real("eps", [](TrainConfig& c) -> double& { return c.eps; }),
        integer("queries", [](TrainConfig& c) -> std::size_t& { return c.model.queries; }),
        integer("width", [](TrainConfig& c) -> std::size_t& { return c.model.encoder.d_sam; }),
        integer("d_mid", [](TrainConfig& c) -> std::size_t& { return c.model.encoder.d_mid; }),
        integer("d_high", [](TrainConfig& c) -> std::size_t& { return c.model.encoder.d_high; }),
        integer("stride", [](TrainConfig& c) -> std::size_t& { return c.model.encoder.stride; }),
        integer("encoder_seed", [](TrainConfig& c) -> std::uint64_t& { return c.model.encoder.seed; }),
        real("tau", [](TrainConfig& c) -> double& { return c.model.decoder.tau; }),
        flag("use_neg_branch", [](TrainConfig& c) -> bool& { return c.model.flags.use_neg_branch; }),
        flag("use_sam_fusion", [](TrainConfig& c) -> bool& { return c.model.flags.use_sam_fusion; }),
        flag("use_cyc_bias", [](TrainConfig& c) -> bool& { return c.model.flags.use_cyc_bias; }),
        flag("use_prior_mask", [](TrainConfig& c) -> bool& { return c.model.flags.use_prior_mask; }),
        integer("canvas_height", [](TrainConfig& c) -> std::size_t& { return c.canvas.height; }),
        integer("canvas_width", [](TrainConfig& c) -> std::size_t& { return c.canvas.width; }),
        integer("eval_episodes", [](TrainConfig& c) -> std::size_t& { return c.eval_episodes; }),
        integer("eval_seed", [](TrainConfig& c) -> std::uint64_t& { return c.eval_seed; }),
        integer("tube_finetune_steps", [](TrainConfig& c) -> std::size_t& { return c.tube_finetune_steps; }),
        integer("tube_frames", [](TrainConfig& c) -> std::size_t& { return c.tube_frames; }),
    };
    return table;
}

std::map<std::string, Tensor> zero_like(const ModelParams& params)
{
    std::map<std::string, Tensor> out;
    params.for_each([&](std::string_view name, const Tensor& t) {
        out.emplace(std::string(name), Tensor(t.shape(), 0.0));
    });
    return out;
}

void accumulate(std::map<std::string, Tensor>& into, const std::map<std::string, Tensor>& g)
{
    for (auto& [name, t] : into) t = add(t, g.at(name));
}

BatchResult reduce(const ModelParams& params, const std::vector<double>& losses,
                   const std::vector<std::map<std::string, Tensor>>& grads)
{
    BatchResult out;
    out.grads = zero_like(params);
    for (std::size_t i = 0; i < losses.size(); ++i) {
        out.loss += losses[i];
        accumulate(out.grads, grads[i]);
    }
    const double inv = 1.0 / static_cast<double>(losses.size());
    out.loss *= inv;
    for (auto& [name, t] : out.grads) t = scale(t, inv);
    if (!std::isfinite(out.loss)) throw DivergenceDetected("batch loss is " + format_double(out.loss));
    for (const auto& [name, t] : out.grads)
        if (!is_finite(t)) throw DivergenceDetected("gradient of " + name + " is not finite");
    return out;
}

Episode tube_support(const TrainConfig& config, const FoldSplit& fold, std::size_t step, std::size_t slot)
{
    CounterRng rng(derive_seed(config.seed, {kTubeTag, step, slot}));
    const auto& classes = fold.train_classes;
    const int cls = classes[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(classes.size()) - 1))];
    return gen_episode(cls, rng(), config.canvas);
}

}  // namespace

const std::vector<std::string>& required_config_keys()
{
    static const std::vector<std::string> keys = {"lr", "steps", "batch", "seed"};
    return keys;
}

TrainConfig parse_train_config(const std::string& text)
{
    TrainConfig config;
    std::set<std::string> seen;
    for (const auto& [key, value] : parse_key_values(text)) {
        const Field* field = nullptr;
        for (const Field& f : fields())
            if (key == f.key) field = &f;
        if (field == nullptr) throw ConfigError("unknown key '" + key + "'");
        if (!seen.insert(key).second) throw ConfigError("duplicate key '" + key + "'");
        field->set(config, key, value);
    }
    for (const std::string& key : required_config_keys())
        if (!seen.count(key)) throw ConfigError("missing required key '" + key + "'");
    validate(config);
    return config;
}

std::string format_train_config(const TrainConfig& config)
{
    std::string out;
    for (const Field& f : fields()) out += std::string(f.key) + " = " + f.get(config) + "\n";
    return out;
}

void validate(const TrainConfig& config)
{
    // lr = 0 is allowed: it is the null-update control.
    if (!(config.lr >= 0.0)) throw ConfigError("key 'lr' must be non-negative");
    if (config.steps == 0) throw ConfigError("key 'steps' must be positive");
    if (config.batch == 0) throw ConfigError("key 'batch' must be positive");
    if (config.weight_decay < 0.0) throw ConfigError("key 'weight_decay' must be non-negative");
    if (!(config.beta1 >= 0.0 && config.beta1 < 1.0)) throw ConfigError("key 'beta1' must lie in [0, 1)");
    if (!(config.beta2 >= 0.0 && config.beta2 < 1.0)) throw ConfigError("key 'beta2' must lie in [0, 1)");
    if (!(config.eps > 0.0)) throw ConfigError("key 'eps' must be positive");
    if (config.model.queries == 0) throw ConfigError("key 'queries' must be positive");
    if (config.model.encoder.d_sam == 0 || config.model.encoder.d_mid == 0 || config.model.encoder.d_high == 0)
        throw ConfigError("feature widths must be positive");
    if (!(config.model.decoder.tau > 0.0)) throw ConfigError("key 'tau' must be positive");
    const std::size_t stride = config.model.encoder.stride;
    if (stride == 0) throw ConfigError("key 'stride' must be positive");
    if (config.canvas.height < kMinCanvas || config.canvas.width < kMinCanvas)
        throw ConfigError("canvas must be at least " + std::to_string(kMinCanvas) + " pixels per side");
    if (config.canvas.height % stride != 0 || config.canvas.width % stride != 0)
        throw ConfigError("canvas size must be divisible by key 'stride'");
    if (config.eval_episodes == 0) throw ConfigError("key 'eval_episodes' must be positive");
    if (config.tube_frames == 0) throw ConfigError("key 'tube_frames' must be positive");
}

void apply_ablations(TrainConfig& config, const std::string& flags)
{
    std::stringstream in(flags);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (item.empty()) continue;
        if (item == "no-cyc") config.model.flags.use_cyc_bias = false;
        else if (item == "no-neg") config.model.flags.use_neg_branch = false;
        else if (item == "no-sam") config.model.flags.use_sam_fusion = false;
        else if (item == "no-prior") config.model.flags.use_prior_mask = false;
        else throw InvalidArgument("unknown ablation '" + item + "' (expected no-cyc, no-neg, no-sam, no-prior)");
    }
}

double cosine_lr(double base_lr, std::size_t step, std::size_t total_steps)
{
    if (total_steps == 0) throw InvalidArgument("cosine schedule needs at least one step");
    if (step >= total_steps) return 0.0;
    const double t = static_cast<double>(step) / static_cast<double>(total_steps);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

void adamw_step(ModelParams& params, const std::map<std::string, Tensor>& grads, AdamState& state,
                double lr, const TrainConfig& config)
{
    ++state.step;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
    const double decay = 1.0 - lr * config.weight_decay;
    params.for_each([&](std::string_view view, Tensor& p) {
        const std::string name(view);
        const auto g_it = grads.find(name);
        if (g_it == grads.end()) throw InvalidArgument("no gradient for parameter " + name);
        const Tensor& g = g_it->second;
        require_same_shape(p, g, "adamw_step");
        auto [m_it, m_new] = state.m.try_emplace(name, p.shape(), 0.0);
        auto [v_it, v_new] = state.v.try_emplace(name, p.shape(), 0.0);
        Tensor& m = m_it->second;
        Tensor& v = v_it->second;
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
            if (lr == 0.0) continue;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] = p[i] * decay - lr * mhat / (std::sqrt(vhat) + config.eps);
        }
    });
}

BatchResult batch_gradients(const ModelParams& params, const std::vector<Episode>& episodes,
                            const StubEncoder& encoder, const ModelConfig& config)
{
    if (episodes.empty()) throw InvalidArgument("empty batch");
    std::vector<double> losses(episodes.size());
    std::vector<std::map<std::string, Tensor>> grads(episodes.size());
    parallel_for(episodes.size(), default_thread_count(), [&](std::size_t i) {
        const Episode& e = episodes[i];
        const EncodedPair pair = encode_pair(encoder, e.support_image, e.support_mask, e.query_image);
        ad::Tape tape;
        const ForwardResult r = forward(tape, track(tape, params), pair, config);
        const ad::Var loss = total_loss(r.probabilities, downsample_mask(e.query_mask, encoder.config().stride));
        losses[i] = loss.value().item();
        grads[i] = ad::grad(tape, loss);
    });
    return reduce(params, losses, grads);
}

BatchResult tube_gradients(const ModelParams& params, const std::vector<Episode>& supports,
                           const std::vector<MaskTube>& tubes, const StubEncoder& encoder,
                           const ModelConfig& config)
{
    if (supports.empty() || supports.size() != tubes.size()) throw InvalidArgument("tube batch size mismatch");
    const std::size_t stride = encoder.config().stride;
    std::vector<double> losses(tubes.size());
    std::vector<std::map<std::string, Tensor>> grads(tubes.size());
    parallel_for(tubes.size(), default_thread_count(), [&](std::size_t i) {
        const MaskTube& tube = tubes[i];
        check_tube(tube);
        const EncodedPair pair =
            encode_pair(encoder, supports[i].support_image, supports[i].support_mask, tube.frames[0]);
        ad::Tape tape;
        const ForwardResult r = forward(tape, track(tape, params), pair, config);
        // Prompts are generated once on frame 0 and reused on every frame.
        ad::Var sum = total_loss(r.probabilities, downsample_mask(tube.masks[0], stride));
        for (std::size_t t = 1; t < tube.length(); ++t) {
            const ad::Var p = decode(r.pos_labeled, r.neg_labeled,
                                     tape.constant(encoder.encode(tube.frames[t]).sam), config.decoder);
            sum = ad::add(sum, total_loss(p, downsample_mask(tube.masks[t], stride)));
        }
        const ad::Var loss = ad::scale(sum, 1.0 / static_cast<double>(tube.length()));
        losses[i] = loss.value().item();
        grads[i] = ad::grad(tape, loss);
    });
    return reduce(params, losses, grads);
}

Episode training_episode(const TrainConfig& config, const FoldSplit& fold, std::size_t step, std::size_t slot)
{
    CounterRng rng(derive_seed(config.seed, {kImageTag, step, slot}));
    const auto& classes = fold.train_classes;
    const int cls = classes[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(classes.size()) - 1))];
    return gen_episode(cls, rng(), config.canvas);
}

TrainResult train(const TrainConfig& config, const FoldSplit& fold, const ModelParams* initial)
{
    validate(config);
    if (fold.train_classes.empty()) throw InvalidArgument("fold has no training classes");
    const StubEncoder encoder(config.model.encoder);
    TrainResult result;
    result.params = initial ? *initial : init_params(config.model, derive_seed(config.seed, {kInitTag}));
    validate(result.params, config.model);

    auto run = [&](auto&& batch_fn, std::size_t steps) {
        for (std::size_t step = 0; step < steps; ++step) {
            BatchResult b;
            try {
                b = batch_fn(step);
            } catch (const NonFiniteInput& e) {
                throw DivergenceDetected(std::string("at step ") + std::to_string(step) + ": " + e.what());
            }
            result.loss_curve.push_back(b.loss);
            adamw_step(result.params, b.grads, result.optimizer, cosine_lr(config.lr, step, steps), config);
        }
    };

    run([&](std::size_t step) {
        std::vector<Episode> batch;
        for (std::size_t s = 0; s < config.batch; ++s) batch.push_back(training_episode(config, fold, step, s));
        return batch_gradients(result.params, batch, encoder, config.model);
    }, config.steps);

    if (config.tube_finetune_steps > 0) {
        run([&](std::size_t step) {
            std::vector<Episode> supports;
            std::vector<MaskTube> tubes;
            for (std::size_t s = 0; s < config.batch; ++s) {
                supports.push_back(tube_support(config, fold, step, s));
                tubes.push_back(make_tube(supports.back(), config.tube_frames,
                                          derive_seed(config.seed, {kTubeTag, step, s, 1})));
            }
            return tube_gradients(result.params, supports, tubes, encoder, config.model);
        }, config.tube_finetune_steps);
    }
    return result;
}

std::vector<Episode> evaluation_episodes(const TrainConfig& config, const FoldSplit& fold)
{
    std::vector<Episode> out;
    for (int cls : fold.test_classes)
        for (std::size_t i = 0; i < config.eval_episodes; ++i)
            out.push_back(gen_episode(cls, derive_seed(config.eval_seed, {static_cast<std::uint64_t>(cls), i}),
                                      config.canvas));
    return out;
}

Predictor model_predictor(const ModelParams& params, const TrainConfig& config)
{
    validate(params, config.model);
    auto encoder = std::make_shared<const StubEncoder>(config.model.encoder);
    return [params, model = config.model, encoder](const Episode& e) {
        return binarize(predict_probabilities(params, *encoder, e.support_image, e.support_mask,
                                              e.query_image, model));
    };
}

MetricReport evaluate(const Predictor& predictor, const std::vector<Episode>& episodes, const Canvas& canvas)
{
    if (episodes.empty()) throw EmptyReport("no evaluation episodes");
    struct Slot {
        double inter = 0, uni = 0, j = 0, f = 0;
    };
    std::vector<Slot> slots(episodes.size());
    const std::size_t tol = default_boundary_tolerance(canvas.height, canvas.width);
    parallel_for(episodes.size(), default_thread_count(), [&](std::size_t i) {
        const Tensor pred = predictor(episodes[i]);
        const Tensor& gt = episodes[i].query_mask;
        require_same_shape(pred, gt, "evaluate");
        Slot& s = slots[i];
        for (std::size_t k = 0; k < gt.size(); ++k) {
            const bool a = pred[k] > 0.5, b = gt[k] > 0.5;
            s.inter += (a && b) ? 1.0 : 0.0;
            s.uni += (a || b) ? 1.0 : 0.0;
        }
        s.j = iou(pred, gt);
        s.f = boundary_f(pred, gt, tol);
    });

    std::map<int, Slot> by_class;
    MetricReport report;
    for (std::size_t i = 0; i < episodes.size(); ++i) {
        Slot& c = by_class[episodes[i].class_id];
        c.inter += slots[i].inter;
        c.uni += slots[i].uni;
        report.j += slots[i].j;
        report.f += slots[i].f;
    }
    for (const auto& [cls, c] : by_class) report.per_class_iou[cls] = c.uni > 0 ? c.inter / c.uni : 1.0;
    report.miou = miou(report.per_class_iou);
    report.j /= static_cast<double>(episodes.size());
    report.f /= static_cast<double>(episodes.size());
    report.jf = 0.5 * (report.j + report.f);
    return report;
}

MetricReport evaluate(const ModelParams& params, const TrainConfig& config, const FoldSplit& fold)
{
    return evaluate(model_predictor(params, config), evaluation_episodes(config, fold), config.canvas);
}

std::vector<double> smooth(const std::vector<double>& curve, std::size_t window)
{
    if (window == 0) throw InvalidArgument("smoothing window must be positive");
    std::vector<double> out(curve.size());
    double running = 0.0;
    for (std::size_t i = 0; i < curve.size(); ++i) {
        running += curve[i];
        if (i >= window) running -= curve[i - window];
        out[i] = running / static_cast<double>(std::min(i + 1, window));
    }
    return out;
}

void save_checkpoint(const std::filesystem::path& dir, const ModelParams& params,
                     const TrainConfig& config, std::size_t step)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    params.for_each([&](std::string_view name, const Tensor& t) {
        write_dcst(dir / (std::string(name) + ".dcst"), t);
    });
    write_file_atomic(dir / "optimizer.txt", "step = " + std::to_string(step) + "\n");
    write_file_atomic(dir / "config.txt", format_train_config(config));
}

Checkpoint load_checkpoint(const std::filesystem::path& dir)
{
    auto need = [&](const std::filesystem::path& p) {
        if (!std::filesystem::exists(p)) throw CheckpointMissing(p.string() + " not found");
        return p;
    };
    Checkpoint ck;
    ck.config = parse_train_config(read_text_file(need(dir / "config.txt")));
    for (const auto& [key, value] : parse_key_values(read_text_file(need(dir / "optimizer.txt")))) {
        if (key != "step") throw ConfigError("optimizer.txt: unknown key '" + key + "'");
        ck.step = parse_unsigned(key, value);
    }
    ck.params.for_each([&](std::string_view name, Tensor& t) {
        t = read_dcst(need(dir / (std::string(name) + ".dcst")));
    });
    validate(ck.params, ck.config.model);
    return ck;
}

std::string format_loss_curve(const std::vector<double>& curve)
{
    std::string out = "step,loss\n";
    for (std::size_t i = 0; i < curve.size(); ++i) out += std::to_string(i) + "," + format_double(curve[i]) + "\n";
    return out;
}

}  // namespace dcsam
