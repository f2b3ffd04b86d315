#pragma once

#include <cstddef>

#include "dcsam/autodiff.hpp"
#include "dcsam/rng.hpp"
#include "dcsam/tensor.hpp"

namespace dcsam {

/// Single-head projections, all d×d. Inputs are row vectors, so Q' = Q·Wq.
template <typename T>
struct AttentionWeights {
    T wq;
    T wk;
    T wv;
};

using AttentionBlock = AttentionWeights<Tensor>;
using AttentionVars = AttentionWeights<ad::Var>;

std::size_t attention_width(const AttentionBlock& block);
AttentionBlock identity_attention(std::size_t d);
AttentionBlock random_attention(std::size_t d, CounterRng& rng);
AttentionVars as_constants(ad::Tape& tape, const AttentionBlock& block);

/// Per support position: 0 where the round trip j -> i* -> j* lands on the
/// same mask label, kMaskedBias otherwise.
struct CycleBias {
    Tensor values;

    std::size_t kept() const;
};

/// A = Q·Kᵀ / sqrt(d).
Tensor affinity(const Tensor& queries, const Tensor& keys);
ad::Var affinity(ad::Var queries, ad::Var keys);

/// i*(j) = argmax_i A[i][j], j*(j) = argmax_j' A[i*][j'], ties to the smallest
/// index. Column and row maxima are each computed once, so this is O(N·HW).
CycleBias cycle_bias(const Tensor& affinity, const Tensor& mask_flat);

struct CycAttentionOptions {
    bool use_cyc_bias = true;
    /// Replays a previously computed bias instead of deriving one (gradient checks).
    const CycleBias* frozen_bias = nullptr;
    /// Receives the bias that was applied.
    CycleBias* bias_out = nullptr;
};

/// softmax(A + B)·V' with Q' = queries·Wq, K' = feats·Wk, V' = feats·Wv.
/// The bias is computed from the current affinity and never differentiated.
ad::Var qcyc_attention(const AttentionVars& block, ad::Var queries, ad::Var feats,
                       const Tensor& mask_flat, const CycAttentionOptions& options = {});
Tensor qcyc_attention(const AttentionBlock& block, const Tensor& queries, const Tensor& feats,
                      const Tensor& mask_flat);

/// Plain scaled dot-product cross-attention (no bias).
Tensor cross_attention(const AttentionBlock& block, const Tensor& queries, const Tensor& feats);

ad::Var self_attention(const AttentionVars& block, ad::Var queries);
Tensor self_attention(const AttentionBlock& block, const Tensor& queries);

void require_binary_mask(const Tensor& mask, const char* op);

}  // namespace dcsam
