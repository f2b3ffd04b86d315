#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>

#include "dcsam/autodiff.hpp"
#include "dcsam/episodes.hpp"
#include "dcsam/pipeline.hpp"

namespace dcsam {

struct GradCheckOptions {
    double step = 1e-5;            // central-difference h
    double tolerance = 1e-4;       // max accepted relative error
    std::size_t coordinates = 5;   // sampled per tensor (all of them if the tensor is smaller)
    std::uint64_t seed = 1;
    // Relative error is |a - n| / max(|a|, |n|, floor); the floor keeps
    // near-zero components from reporting pure rounding noise.
    double floor = 1e-6;
};

struct GradCheckReport {
    std::map<std::string, double> max_relative_error;
    double worst = 0.0;
    std::string worst_parameter;
    bool passed = true;
};

/// Builds a scalar loss from named inputs registered on a fresh tape.
using LossBuilder = std::function<ad::Var(ad::Tape&, const std::map<std::string, ad::Var>&)>;

/// Compares reverse-mode gradients against central differences on randomly
/// sampled coordinates of every input.
GradCheckReport check_gradients(const LossBuilder& loss, const std::map<std::string, Tensor>& inputs,
                                const GradCheckOptions& options = {});

/// Optional rewrite applied to the pipeline loss before differentiation; the
/// negative-control fixture uses it to inject a wrong backward rule.
using LossTransform = std::function<ad::Var(ad::Var)>;

/// Full prompt-pipeline loss (total loss of the final mask) checked against
/// every ModelParams tensor. Discrete decisions (cycle biases, pseudo mask) are
/// recorded once at the unperturbed point and replayed for every evaluation.
GradCheckReport grad_check(const ModelParams& params, const Episode& episode,
                           const ModelConfig& config, const GradCheckOptions& options = {},
                           const LossTransform& transform = {});

}  // namespace dcsam
