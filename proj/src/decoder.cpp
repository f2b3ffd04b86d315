#include "dcsam/decoder.hpp"

#include <cmath>

#include "dcsam/errors.hpp"

namespace dcsam {

void validate(const DecoderConfig& cfg)
{
    if (!(cfg.tau > 0.0) || !std::isfinite(cfg.tau))
        throw InvalidArgument("decoder tau must be positive and finite");
}

ad::Var decode(ad::Var pos_labeled, std::optional<ad::Var> neg_labeled, ad::Var sam_features,
               const DecoderConfig& cfg)
{
    validate(cfg);
    require_rank(sam_features.value(), 3, "decode");
    require_rank(pos_labeled.value(), 2, "decode");
    const std::size_t d = sam_features.shape()[0], h = sam_features.shape()[1],
                      w = sam_features.shape()[2];
    if (pos_labeled.shape()[1] != d || (neg_labeled && neg_labeled->shape()[1] != d))
        throw ShapeMismatch("decode: prompt width differs from feature width " +
                            std::to_string(d));
    const ad::Var flat = ad::reshape(sam_features, {d, h * w});
    ad::Var score = ad::logsumexp_cols(ad::matmul(pos_labeled, flat), cfg.tau);
    if (neg_labeled)
        score = ad::sub(score, ad::logsumexp_cols(ad::matmul(*neg_labeled, flat), cfg.tau));
    return ad::reshape(ad::sigmoid(score), {h, w});
}

Tensor decode(const PromptSet& prompts, const Tensor& sam_features, const DecoderConfig& cfg)
{
    ad::Tape tape;
    std::optional<ad::Var> neg;
    if (!prompts.neg_labeled.empty()) neg = tape.constant(prompts.neg_labeled);
    return decode(tape.constant(prompts.pos_labeled), neg, tape.constant(sam_features), cfg)
        .value();
}

}  // namespace dcsam
