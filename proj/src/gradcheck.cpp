#include "dcsam/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "dcsam/errors.hpp"
#include "dcsam/losses.hpp"
#include "dcsam/rng.hpp"

namespace dcsam {
namespace {

std::vector<std::size_t> sample_coordinates(std::size_t size, std::size_t wanted, CounterRng& rng)
{
    std::vector<std::size_t> idx(size);
    std::iota(idx.begin(), idx.end(), 0);
    if (size <= wanted) return idx;
    // Partial Fisher-Yates: the first `wanted` slots become a uniform sample.
    for (std::size_t i = 0; i < wanted; ++i) {
        const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i),
                                                                static_cast<std::int64_t>(size - 1)));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(wanted);
    return idx;
}

}  // namespace

GradCheckReport check_gradients(const LossBuilder& loss, const std::map<std::string, Tensor>& inputs,
                                const GradCheckOptions& options)
{
    auto evaluate = [&](const std::map<std::string, Tensor>& values) {
        ad::Tape tape;
        std::map<std::string, ad::Var> vars;
        for (const auto& [name, t] : values) vars.emplace(name, tape.constant(t));
        return loss(tape, vars).value().item();
    };

    ad::Tape tape;
    std::map<std::string, ad::Var> vars;
    for (const auto& [name, t] : inputs) vars.emplace(name, tape.parameter(name, t));
    const std::map<std::string, Tensor> analytic = ad::grad(tape, loss(tape, vars));

    GradCheckReport report;
    CounterRng rng(options.seed);
    std::map<std::string, Tensor> probe = inputs;
    for (const auto& [name, t] : inputs) {
        double worst = 0.0;
        for (std::size_t i : sample_coordinates(t.size(), options.coordinates, rng)) {
            const double original = t[i];
            probe[name][i] = original + options.step;
            const double up = evaluate(probe);
            probe[name][i] = original - options.step;
            const double down = evaluate(probe);
            probe[name][i] = original;
            const double numeric = (up - down) / (2.0 * options.step);
            const double exact = analytic.at(name)[i];
            const double denom = std::max({std::abs(numeric), std::abs(exact), options.floor});
            const double rel = std::abs(numeric - exact) / denom;
            worst = std::isfinite(rel) ? std::max(worst, rel) : INFINITY;
        }
        report.max_relative_error[name] = worst;
        if (worst >= report.worst) {
            report.worst = worst;
            report.worst_parameter = name;
        }
    }
    report.passed = report.worst < options.tolerance;
    return report;
}

GradCheckReport grad_check(const ModelParams& params, const Episode& episode,
                           const ModelConfig& config, const GradCheckOptions& options,
                           const LossTransform& transform)
{
    validate(params, config);
    const StubEncoder encoder(config.encoder);
    const EncodedPair pair =
        encode_pair(encoder, episode.support_image, episode.support_mask, episode.query_image);
    const Tensor target = downsample_mask(episode.query_mask, config.encoder.stride);

    std::map<std::string, Tensor> inputs;
    params.for_each([&](std::string_view name, const Tensor& t) { inputs.emplace(std::string(name), t); });

    auto to_vars = [](const std::map<std::string, ad::Var>& vars) {
        ParamVars pv;
        pv.for_each([&](std::string_view name, ad::Var& v) { v = vars.at(std::string(name)); });
        return pv;
    };

    // Fix every discrete choice at the unperturbed parameters.
    DiscreteDecisions decisions;
    {
        ad::Tape tape;
        ForwardOptions record;
        record.record = &decisions;
        forward(tape, track(tape, params, false), pair, config, record);
    }

    const LossBuilder builder = [&](ad::Tape& tape, const std::map<std::string, ad::Var>& vars) {
        ForwardOptions replay;
        replay.replay = &decisions;
        const ForwardResult r = forward(tape, to_vars(vars), pair, config, replay);
        ad::Var loss = total_loss(r.probabilities, target);
        return transform ? transform(loss) : loss;
    };
    return check_gradients(builder, inputs, options);
}

}  // namespace dcsam
