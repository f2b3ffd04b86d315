#pragma once

#include <optional>

#include "dcsam/autodiff.hpp"
#include "dcsam/prompts.hpp"
#include "dcsam/tensor.hpp"

namespace dcsam {

/// Parameter-free stand-in for the SAM mask decoder.
struct DecoderConfig {
    double tau = 1.0;  // logsumexp temperature, > 0
};

void validate(const DecoderConfig& cfg);

/// Per pixel p with feature f_p:
///   s+(p) = tau * log Σ_i exp(<pos_labeled_i, f_p> / tau), s- likewise over neg,
///   out(p) = sigmoid(s+(p) - s-(p)).
/// Positive prompts pull a pixel towards foreground, negative ones push it away.
Tensor decode(const PromptSet& prompts, const Tensor& sam_features, const DecoderConfig& cfg);

/// Tracked form. Without negative prompts s- is taken as 0.
ad::Var decode(ad::Var pos_labeled, std::optional<ad::Var> neg_labeled, ad::Var sam_features,
               const DecoderConfig& cfg);

}  // namespace dcsam
