#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "dcsam/attention.hpp"
#include "dcsam/autodiff.hpp"
#include "dcsam/decoder.hpp"
#include "dcsam/encoder.hpp"
#include "dcsam/prompts.hpp"
#include "dcsam/tensor.hpp"

namespace dcsam {

/// Ablation switches. All on is the full model.
struct PipelineFlags {
    bool use_neg_branch = true;
    bool use_sam_fusion = true;
    bool use_cyc_bias = true;
    bool use_prior_mask = true;
};

struct ModelConfig {
    EncoderConfig encoder;
    std::size_t queries = 25;  // prompts per branch
    PipelineFlags flags;
    DecoderConfig decoder;

    /// Prompt width d; equals the SAM feature width.
    std::size_t width() const { return encoder.d_sam; }
    /// Channels entering the fusion conv: [F; pooled F; F_SAM?; prior?].
    std::size_t fusion_in_channels() const;
};

/// Every trainable tensor, generic over Tensor (values) and ad::Var (tracked).
template <typename T>
struct ParamPack {
    T fusion_w;  // d × fusion_in_channels
    T fusion_b;  // d
    AttentionWeights<T> attn_support;
    AttentionWeights<T> attn_query;
    AttentionWeights<T> attn_self;
    T q_pos_init;  // N×d
    T q_neg_init;  // N×d
    T e_pos;       // d
    T e_neg;       // d

    /// Visits (name, member) in a fixed order; the names key checkpoints and gradients.
    template <typename Self, typename Fn>
    static void visit(Self& self, Fn&& fn)
    {
        fn(std::string_view("fusion_w"), self.fusion_w);
        fn(std::string_view("fusion_b"), self.fusion_b);
        fn(std::string_view("attn_support_wq"), self.attn_support.wq);
        fn(std::string_view("attn_support_wk"), self.attn_support.wk);
        fn(std::string_view("attn_support_wv"), self.attn_support.wv);
        fn(std::string_view("attn_query_wq"), self.attn_query.wq);
        fn(std::string_view("attn_query_wk"), self.attn_query.wk);
        fn(std::string_view("attn_query_wv"), self.attn_query.wv);
        fn(std::string_view("attn_self_wq"), self.attn_self.wq);
        fn(std::string_view("attn_self_wk"), self.attn_self.wk);
        fn(std::string_view("attn_self_wv"), self.attn_self.wv);
        fn(std::string_view("q_pos_init"), self.q_pos_init);
        fn(std::string_view("q_neg_init"), self.q_neg_init);
        fn(std::string_view("e_pos"), self.e_pos);
        fn(std::string_view("e_neg"), self.e_neg);
    }
    template <typename Fn>
    void for_each(Fn&& fn) { visit(*this, fn); }
    template <typename Fn>
    void for_each(Fn&& fn) const { visit(*this, fn); }
};

using ModelParams = ParamPack<Tensor>;
using ParamVars = ParamPack<ad::Var>;

ModelParams init_params(const ModelConfig& config, std::uint64_t seed);
void validate(const ModelParams& params, const ModelConfig& config);

/// Registers every tensor as a named tape parameter (or as constants).
ParamVars track(ad::Tape& tape, const ModelParams& params, bool trainable = true);

/// Encoder output for one support/query pair at feature resolution.
struct EncodedPair {
    EncodedImage support;
    EncodedImage query;
    Tensor support_mask;  // h×w, binary
};

EncodedPair encode_pair(const StubEncoder& encoder, const Tensor& support_image,
                        const Tensor& support_mask, const Tensor& query_image);

/// Max cosine similarity of each query pixel against every foreground support
/// pixel, min-max normalised to [0, 1]. A constant map normalises to zeros.
Tensor prior_mask(const Tensor& high_query, const Tensor& high_support, const Tensor& support_mask);

/// Σ_p M_p F_p / (Σ_p M_p + 1e-6).
Tensor mask_average(const Tensor& features, const Tensor& mask);

/// conv1x1(Concat(F, broadcast pooled, F_SAM?, prior?)) -> d×H×W. Which optional
/// slots are present follows `flags`; `sam` / `prior` must be given when enabled.
ad::Var fuse(ad::Var features, const Tensor& pooled, std::optional<ad::Var> sam,
             const std::optional<Tensor>& prior, ad::Var fusion_w, ad::Var fusion_b);
Tensor fuse(const Tensor& features, const Tensor& pooled, const std::optional<Tensor>& sam,
            const std::optional<Tensor>& prior, const Tensor& fusion_w, const Tensor& fusion_b);

/// Discrete choices made during a forward pass (cycle biases in call order and
/// the binarised pseudo mask). Replaying them makes the loss a smooth function
/// of the parameters, which is what gradient checks need.
struct DiscreteDecisions {
    std::vector<CycleBias> biases;
    std::optional<Tensor> pseudo_mask;
};

struct ForwardOptions {
    DiscreteDecisions* record = nullptr;
    const DiscreteDecisions* replay = nullptr;
};

struct ForwardResult {
    ad::Var pos;  // refined prompts before labeling
    std::optional<ad::Var> neg;
    ad::Var pos_labeled;
    std::optional<ad::Var> neg_labeled;
    ad::Var probabilities;  // h×w
    Tensor pseudo_mask;     // h×w, binarised positive-branch pseudo mask
};

/// Support-pass prompts of one branch: QCycAttn(Q_init, F^{s'}_b, M_b).
/// Throws EmptySupportMask when the branch mask has no foreground.
ad::Var mediate_prompts(const ParamVars& params, ad::Var init_queries, const EncodedPair& pair,
                        const Tensor& branch_mask, const ModelConfig& config,
                        const ForwardOptions& options = {});

/// The full prompt-generation chain plus the final decode.
ForwardResult forward(ad::Tape& tape, const ParamVars& params, const EncodedPair& pair,
                      const ModelConfig& config, const ForwardOptions& options = {});

/// Untracked convenience: labeled prompt set and pseudo mask.
struct GeneratedPrompts {
    PromptSet prompts;
    Tensor pseudo_mask;
};
GeneratedPrompts generate_prompts(const ModelParams& params, const EncodedPair& pair,
                                  const ModelConfig& config);

/// Foreground probabilities at image resolution.
Tensor predict_probabilities(const ModelParams& params, const StubEncoder& encoder,
                             const Tensor& support_image, const Tensor& support_mask,
                             const Tensor& query_image, const ModelConfig& config);
/// Probabilities > 0.5.
Tensor binarize(const Tensor& probabilities);

}  // namespace dcsam
