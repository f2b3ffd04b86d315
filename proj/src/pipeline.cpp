#include "dcsam/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "dcsam/errors.hpp"
#include "dcsam/rng.hpp"

namespace dcsam {

PromptSet label_prompts(const Tensor& pos, const Tensor& neg, const Tensor& e_pos,
                        const Tensor& e_neg)
{
    return {pos, neg, add_row(pos, e_pos), add_row(neg, e_neg)};
}

ad::Var label_prompts(ad::Var prompts, ad::Var embedding) { return ad::add_row(prompts, embedding); }

std::size_t ModelConfig::fusion_in_channels() const
{
    return 2 * encoder.d_mid + (flags.use_sam_fusion ? encoder.d_sam : 0) +
           (flags.use_prior_mask ? 1 : 0);
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed)
{
    const std::size_t d = config.width(), n = config.queries, cin = config.fusion_in_channels();
    if (n == 0 || d == 0) throw InvalidArgument("queries and width must be positive");
    CounterRng root(derive_seed(seed, {0xD0C5A3}));
    ModelParams p;
    CounterRng fusion = root.split(1);
    p.fusion_w = fusion.normal_tensor({d, cin}, 1.0 / std::sqrt(static_cast<double>(cin)));
    p.fusion_b = Tensor({d});
    CounterRng attn = root.split(2);
    p.attn_support = random_attention(d, attn);
    p.attn_query = random_attention(d, attn);
    p.attn_self = random_attention(d, attn);
    // Unit-Gaussian queries scaled by 1/sqrt(d).
    CounterRng queries = root.split(3);
    const double qstd = 1.0 / std::sqrt(static_cast<double>(d));
    p.q_pos_init = queries.normal_tensor({n, d}, qstd);
    p.q_neg_init = queries.normal_tensor({n, d}, qstd);
    CounterRng embed = root.split(4);
    p.e_pos = embed.normal_tensor({d}, qstd);
    p.e_neg = embed.normal_tensor({d}, qstd);
    return p;
}

void validate(const ModelParams& params, const ModelConfig& config)
{
    const std::size_t d = config.width(), n = config.queries;
    auto expect = [](const Tensor& t, const Shape& shape, const char* name) {
        if (t.shape() != shape)
            throw ShapeMismatch(std::string(name) + " is " + shape_string(t.shape()) +
                                ", expected " + shape_string(shape));
    };
    expect(params.fusion_w, {d, config.fusion_in_channels()}, "fusion_w");
    expect(params.fusion_b, {d}, "fusion_b");
    for (const AttentionBlock* b : {&params.attn_support, &params.attn_query, &params.attn_self}) {
        expect(b->wq, {d, d}, "attention wq");
        expect(b->wk, {d, d}, "attention wk");
        expect(b->wv, {d, d}, "attention wv");
    }
    expect(params.q_pos_init, {n, d}, "q_pos_init");
    expect(params.q_neg_init, {n, d}, "q_neg_init");
    expect(params.e_pos, {d}, "e_pos");
    expect(params.e_neg, {d}, "e_neg");
}

ParamVars track(ad::Tape& tape, const ModelParams& params, bool trainable)
{
    ParamVars vars;
    // Same member order on both packs, so walk them in lockstep.
    std::vector<ad::Var*> slots;
    vars.for_each([&](std::string_view, ad::Var& v) { slots.push_back(&v); });
    std::size_t k = 0;
    params.for_each([&](std::string_view name, const Tensor& t) {
        *slots[k++] = trainable ? tape.parameter(std::string(name), t) : tape.constant(t);
    });
    return vars;
}

EncodedPair encode_pair(const StubEncoder& encoder, const Tensor& support_image,
                        const Tensor& support_mask, const Tensor& query_image)
{
    require_rank(support_mask, 2, "encode_pair");
    if (support_mask.dim(0) != support_image.dim(1) || support_mask.dim(1) != support_image.dim(2))
        throw ShapeMismatch("support mask " + shape_string(support_mask.shape()) +
                            " does not match image " + shape_string(support_image.shape()));
    require_binary_mask(support_mask, "encode_pair");
    EncodedPair pair{encoder.encode(support_image), encoder.encode(query_image),
                     downsample_mask(support_mask, encoder.config().stride)};
    if (pair.support.mid.dim(1) != pair.query.mid.dim(1) ||
        pair.support.mid.dim(2) != pair.query.mid.dim(2))
        throw ShapeMismatch("support and query images differ in size");
    return pair;
}

Tensor prior_mask(const Tensor& high_query, const Tensor& high_support, const Tensor& support_mask)
{
    require_rank(high_query, 3, "prior_mask");
    require_same_shape(high_query, high_support, "prior_mask");
    const std::size_t c = high_query.dim(0), h = high_query.dim(1), w = high_query.dim(2);
    const std::size_t hw = h * w;
    if (support_mask.shape() != Shape{h, w})
        throw ShapeMismatch("prior_mask: mask " + shape_string(support_mask.shape()) +
                            " for features " + shape_string(high_query.shape()));
    require_binary_mask(support_mask, "prior_mask");

    auto norms = [&](const Tensor& f) {
        std::vector<double> n(hw, 0.0);
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t p = 0; p < hw; ++p) n[p] += f[ch * hw + p] * f[ch * hw + p];
        for (double& v : n) v = std::sqrt(v);
        return n;
    };
    const std::vector<double> nq = norms(high_query), ns = norms(high_support);

    std::vector<std::size_t> fg;
    for (std::size_t p = 0; p < hw; ++p)
        if (support_mask[p] != 0.0) fg.push_back(p);
    if (fg.empty()) throw EmptySupportMask("prior mask needs a foreground support pixel");

    Tensor prior({h, w});
    for (std::size_t q = 0; q < hw; ++q) {
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t s : fg) {
            double dot = 0.0;
            for (std::size_t ch = 0; ch < c; ++ch) dot += high_query[ch * hw + q] * high_support[ch * hw + s];
            const double denom = nq[q] * ns[s];
            best = std::max(best, denom > 0.0 ? dot / denom : 0.0);
        }
        prior[q] = best;
    }
    const auto [lo, hi] = std::minmax_element(prior.data().begin(), prior.data().end());
    const double min = *lo, range = *hi - *lo;
    for (double& v : prior.data()) v = range > 1e-12 ? (v - min) / range : 0.0;
    return prior;
}

Tensor mask_average(const Tensor& features, const Tensor& mask)
{
    require_rank(features, 3, "mask_average");
    const std::size_t c = features.dim(0), hw = features.dim(1) * features.dim(2);
    if (mask.size() != hw)
        throw ShapeMismatch("mask_average: mask " + shape_string(mask.shape()) + " for " +
                            shape_string(features.shape()));
    double weight = 1e-6;
    for (double m : mask.data()) weight += m;
    Tensor out({c});
    for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::size_t p = 0; p < hw; ++p) acc += mask[p] * features[ch * hw + p];
        out[ch] = acc / weight;
    }
    return out;
}

ad::Var fuse(ad::Var features, const Tensor& pooled, std::optional<ad::Var> sam,
             const std::optional<Tensor>& prior, ad::Var fusion_w, ad::Var fusion_b)
{
    require_rank(features.value(), 3, "fuse");
    ad::Tape& tape = features.tape();
    const std::size_t h = features.shape()[1], w = features.shape()[2];
    std::vector<ad::Var> parts{features,
                               ad::broadcast_spatial(tape.constant(pooled), h, w)};
    if (sam) {
        require_rank(sam->value(), 3, "fuse");
        if (sam->shape()[1] != h || sam->shape()[2] != w)
            throw ShapeMismatch("fuse: SAM features " + shape_string(sam->shape()) +
                                " vs " + shape_string(features.shape()));
        parts.push_back(*sam);
    }
    if (prior) {
        if (prior->shape() != Shape{h, w})
            throw ShapeMismatch("fuse: prior " + shape_string(prior->shape()) + " vs " +
                                shape_string(features.shape()));
        parts.push_back(tape.constant(prior->reshaped({1, h, w})));
    }
    return ad::conv1x1(ad::concat(parts), fusion_w, fusion_b);
}

Tensor fuse(const Tensor& features, const Tensor& pooled, const std::optional<Tensor>& sam,
            const std::optional<Tensor>& prior, const Tensor& fusion_w, const Tensor& fusion_b)
{
    ad::Tape tape;
    std::optional<ad::Var> sam_var;
    if (sam) sam_var = tape.constant(*sam);
    return fuse(tape.constant(features), pooled, sam_var, prior, tape.constant(fusion_w),
                tape.constant(fusion_b))
        .value();
}

namespace {

Tensor complement(const Tensor& mask)
{
    Tensor out(mask.shape());
    for (std::size_t i = 0; i < mask.size(); ++i) out[i] = 1.0 - mask[i];
    return out;
}

bool has_foreground(const Tensor& mask)
{
    return std::any_of(mask.data().begin(), mask.data().end(), [](double v) { return v != 0.0; });
}

/// Hands out recorded/replayed cycle biases in call order.
class DecisionCursor {
   public:
    explicit DecisionCursor(const ForwardOptions& options) : options_(options) {}

    CycAttentionOptions next(bool use_cyc_bias, CycleBias& scratch)
    {
        CycAttentionOptions o;
        o.use_cyc_bias = use_cyc_bias;
        o.bias_out = &scratch;
        if (options_.replay != nullptr) {
            if (index_ >= options_.replay->biases.size())
                throw InvalidArgument("replayed decisions are shorter than the forward pass");
            o.frozen_bias = &options_.replay->biases[index_];
        }
        ++index_;
        return o;
    }

    void commit(const CycleBias& bias)
    {
        if (options_.record != nullptr) options_.record->biases.push_back(bias);
    }

   private:
    const ForwardOptions& options_;
    std::size_t index_ = 0;
};

// Fused features of one image for a branch, flattened to HW×d rows.
ad::Var fused_rows(const ParamVars& params, const EncodedImage& image, const Tensor& pooled,
                   const std::optional<Tensor>& prior, const ModelConfig& config)
{
    ad::Tape& tape = params.fusion_w.tape();
    std::optional<ad::Var> sam;
    if (config.flags.use_sam_fusion) sam = tape.constant(image.sam);
    const ad::Var fused =
        fuse(tape.constant(image.mid), pooled, sam, prior, params.fusion_w, params.fusion_b);
    const std::size_t d = fused.shape()[0], hw = fused.shape()[1] * fused.shape()[2];
    return ad::transpose(ad::reshape(fused, {d, hw}));
}

ad::Var mediate_impl(const ParamVars& params, ad::Var init_queries, const EncodedPair& pair,
                     const Tensor& branch_mask, const ModelConfig& config, DecisionCursor& cursor)
{
    if (!has_foreground(branch_mask))
        throw EmptySupportMask("branch mask has no foreground pixel");
    const Tensor pooled = mask_average(pair.support.mid, branch_mask);
    // The support image's own mask fills the prior slot on the support side.
    std::optional<Tensor> prior;
    if (config.flags.use_prior_mask) prior = branch_mask;
    const ad::Var keys = fused_rows(params, pair.support, pooled, prior, config);
    CycleBias applied;
    const ad::Var out = qcyc_attention(params.attn_support, init_queries, keys,
                                       branch_mask.reshaped({branch_mask.size()}),
                                       cursor.next(config.flags.use_cyc_bias, applied));
    cursor.commit(applied);
    return out;
}

ad::Var refine_impl(const ParamVars& params, ad::Var mediate, const EncodedPair& pair,
                    const Tensor& branch_mask, const Tensor& pseudo_mask,
                    const ModelConfig& config, DecisionCursor& cursor)
{
    const Tensor pooled = mask_average(pair.support.mid, branch_mask);
    std::optional<Tensor> prior;
    if (config.flags.use_prior_mask)
        prior = prior_mask(pair.query.high, pair.support.high, branch_mask);
    const ad::Var keys = fused_rows(params, pair.query, pooled, prior, config);
    CycleBias applied;
    const ad::Var attended = qcyc_attention(params.attn_query, mediate, keys,
                                            pseudo_mask.reshaped({pseudo_mask.size()}),
                                            cursor.next(config.flags.use_cyc_bias, applied));
    cursor.commit(applied);
    return self_attention(params.attn_self, attended);
}

}  // namespace

Tensor binarize(const Tensor& probabilities)
{
    Tensor out(probabilities.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = probabilities[i] > 0.5 ? 1.0 : 0.0;
    return out;
}

ad::Var mediate_prompts(const ParamVars& params, ad::Var init_queries, const EncodedPair& pair,
                        const Tensor& branch_mask, const ModelConfig& config,
                        const ForwardOptions& options)
{
    DecisionCursor cursor(options);
    return mediate_impl(params, init_queries, pair, branch_mask, config, cursor);
}

ForwardResult forward(ad::Tape& tape, const ParamVars& params, const EncodedPair& pair,
                      const ModelConfig& config, const ForwardOptions& options)
{
    validate(config.decoder);
    if (&params.fusion_w.tape() != &tape) throw InvalidArgument("params tracked on another tape");
    const Tensor& fg = pair.support_mask;
    if (!has_foreground(fg)) throw EmptySupportMask("support mask is empty");
    const bool dual = config.flags.use_neg_branch;
    const Tensor bg = complement(fg);

    DecisionCursor cursor(options);
    const ad::Var pos_med = mediate_impl(params, params.q_pos_init, pair, fg, config, cursor);
    std::optional<ad::Var> neg_med;
    if (dual) neg_med = mediate_impl(params, params.q_neg_init, pair, bg, config, cursor);

    // Pseudo query mask: decoded from the mediate prompts, binarised, detached.
    Tensor pseudo;
    if (options.replay != nullptr && options.replay->pseudo_mask) {
        pseudo = *options.replay->pseudo_mask;
    } else {
        ad::Tape scratch;
        std::optional<ad::Var> neg_lab;
        if (dual)
            neg_lab = scratch.constant(add_row(neg_med->value(), params.e_neg.value()));
        pseudo = binarize(decode(scratch.constant(add_row(pos_med.value(), params.e_pos.value())),
                                 neg_lab, scratch.constant(pair.query.sam), config.decoder)
                              .value());
    }
    if (options.record != nullptr) options.record->pseudo_mask = pseudo;

    ForwardResult result;
    result.pseudo_mask = pseudo;
    result.pos = refine_impl(params, pos_med, pair, fg, pseudo, config, cursor);
    if (dual) result.neg = refine_impl(params, *neg_med, pair, bg, complement(pseudo), config, cursor);

    result.pos_labeled = label_prompts(result.pos, params.e_pos);
    if (dual) result.neg_labeled = label_prompts(*result.neg, params.e_neg);
    result.probabilities =
        decode(result.pos_labeled, result.neg_labeled, tape.constant(pair.query.sam), config.decoder);
    return result;
}

GeneratedPrompts generate_prompts(const ModelParams& params, const EncodedPair& pair,
                                  const ModelConfig& config)
{
    validate(params, config);
    ad::Tape tape;
    const ParamVars vars = track(tape, params, false);
    const ForwardResult r = forward(tape, vars, pair, config);
    GeneratedPrompts out;
    out.pseudo_mask = r.pseudo_mask;
    out.prompts.pos = r.pos.value();
    out.prompts.pos_labeled = r.pos_labeled.value();
    if (r.neg) {
        out.prompts.neg = r.neg->value();
        out.prompts.neg_labeled = r.neg_labeled->value();
    }
    return out;
}

Tensor predict_probabilities(const ModelParams& params, const StubEncoder& encoder,
                             const Tensor& support_image, const Tensor& support_mask,
                             const Tensor& query_image, const ModelConfig& config)
{
    validate(params, config);
    const EncodedPair pair = encode_pair(encoder, support_image, support_mask, query_image);
    ad::Tape tape;
    const ForwardResult r = forward(tape, track(tape, params, false), pair, config);
    return upsample_nearest(r.probabilities.value(), encoder.config().stride);
}

}  // namespace dcsam
