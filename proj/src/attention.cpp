#include "dcsam/attention.hpp"

#include <cmath>
#include <vector>

#include "dcsam/errors.hpp"

namespace dcsam {

std::size_t attention_width(const AttentionBlock& block)
{
    require_rank(block.wq, 2, "AttentionBlock");
    const std::size_t d = block.wq.dim(0);
    for (const Tensor* w : {&block.wq, &block.wk, &block.wv})
        if (w->shape() != Shape{d, d})
            throw ShapeMismatch("attention projections must all be " + shape_string({d, d}));
    return d;
}

AttentionBlock identity_attention(std::size_t d)
{
    Tensor eye({d, d});
    for (std::size_t i = 0; i < d; ++i) eye.at(i, i) = 1.0;
    return {eye, eye, eye};
}

AttentionBlock random_attention(std::size_t d, CounterRng& rng)
{
    const double std = 1.0 / std::sqrt(static_cast<double>(d));
    AttentionBlock block;
    block.wq = rng.normal_tensor({d, d}, std);
    block.wk = rng.normal_tensor({d, d}, std);
    block.wv = rng.normal_tensor({d, d}, std);
    return block;
}

AttentionVars as_constants(ad::Tape& tape, const AttentionBlock& block)
{
    return {tape.constant(block.wq), tape.constant(block.wk), tape.constant(block.wv)};
}

std::size_t CycleBias::kept() const
{
    std::size_t n = 0;
    for (double v : values.data()) n += v == 0.0;
    return n;
}

void require_binary_mask(const Tensor& mask, const char* op)
{
    for (double v : mask.data())
        if (v != 0.0 && v != 1.0)
            throw InvalidArgument(std::string(op) + ": mask entries must be 0 or 1");
}

Tensor affinity(const Tensor& queries, const Tensor& keys)
{
    require_rank(queries, 2, "affinity");
    require_rank(keys, 2, "affinity");
    if (queries.dim(1) != keys.dim(1))
        throw ShapeMismatch("affinity: widths " + shape_string(queries.shape()) + " vs " +
                            shape_string(keys.shape()));
    const double inv = 1.0 / std::sqrt(static_cast<double>(queries.dim(1)));
    return scale(matmul(queries, transpose(keys)), inv);
}

ad::Var affinity(ad::Var queries, ad::Var keys)
{
    require_rank(queries.value(), 2, "affinity");
    require_rank(keys.value(), 2, "affinity");
    if (queries.shape()[1] != keys.shape()[1])
        throw ShapeMismatch("affinity: widths " + shape_string(queries.shape()) + " vs " +
                            shape_string(keys.shape()));
    const double inv = 1.0 / std::sqrt(static_cast<double>(queries.shape()[1]));
    return ad::scale(ad::matmul(queries, ad::transpose(keys)), inv);
}

CycleBias cycle_bias(const Tensor& a, const Tensor& mask_flat)
{
    require_rank(a, 2, "cycle_bias");
    const std::size_t n = a.dim(0), hw = a.dim(1);
    if (mask_flat.size() != hw)
        throw ShapeMismatch("cycle_bias: mask has " + std::to_string(mask_flat.size()) +
                            " entries for " + std::to_string(hw) + " positions");
    require_binary_mask(mask_flat, "cycle_bias");
    require_finite(a, "cycle_bias");

    // Column argmax streamed row by row; strict '>' keeps the smallest index on ties.
    std::vector<std::size_t> best_query(hw, 0);
    for (std::size_t i = 1; i < n; ++i)
        for (std::size_t j = 0; j < hw; ++j)
            if (a.at(i, j) > a.at(best_query[j], j)) best_query[j] = i;

    std::vector<std::size_t> best_pixel(n);
    for (std::size_t i = 0; i < n; ++i)
        best_pixel[i] = argmax(a.data().subspan(i * hw, hw));

    CycleBias bias{Tensor({hw})};
    for (std::size_t j = 0; j < hw; ++j) {
        const std::size_t back = best_pixel[best_query[j]];
        bias.values[j] = mask_flat[j] == mask_flat[back] ? 0.0 : kMaskedBias;
    }
    return bias;
}

ad::Var qcyc_attention(const AttentionVars& block, ad::Var queries, ad::Var feats,
                       const Tensor& mask_flat, const CycAttentionOptions& options)
{
    require_rank(feats.value(), 2, "qcyc_attention");
    if (mask_flat.size() != feats.shape()[0])
        throw ShapeMismatch("qcyc_attention: mask length " + std::to_string(mask_flat.size()) +
                            " for " + std::to_string(feats.shape()[0]) + " positions");
    const ad::Var q = ad::matmul(queries, block.wq);
    const ad::Var k = ad::matmul(feats, block.wk);
    const ad::Var v = ad::matmul(feats, block.wv);
    const ad::Var logits = affinity(q, k);

    CycleBias bias;
    if (options.frozen_bias != nullptr) {
        bias = *options.frozen_bias;
    } else if (options.use_cyc_bias) {
        bias = cycle_bias(logits.value(), mask_flat);
    } else {
        bias.values = Tensor({mask_flat.size()});
    }
    if (bias.values.size() != mask_flat.size())
        throw ShapeMismatch("qcyc_attention: frozen bias has the wrong length");
    if (options.bias_out != nullptr) *options.bias_out = bias;

    return ad::matmul(ad::masked_softmax_rows(logits, bias.values), v);
}

Tensor qcyc_attention(const AttentionBlock& block, const Tensor& queries, const Tensor& feats,
                      const Tensor& mask_flat)
{
    attention_width(block);
    ad::Tape tape;
    return qcyc_attention(as_constants(tape, block), tape.constant(queries), tape.constant(feats),
                          mask_flat)
        .value();
}

Tensor cross_attention(const AttentionBlock& block, const Tensor& queries, const Tensor& feats)
{
    attention_width(block);
    const Tensor q = matmul(queries, block.wq);
    const Tensor k = matmul(feats, block.wk);
    const Tensor v = matmul(feats, block.wv);
    const Tensor a = affinity(q, k);
    return matmul(masked_softmax_rows(a, Tensor({a.dim(1)})), v);
}

ad::Var self_attention(const AttentionVars& block, ad::Var queries)
{
    const ad::Var q = ad::matmul(queries, block.wq);
    const ad::Var k = ad::matmul(queries, block.wk);
    const ad::Var v = ad::matmul(queries, block.wv);
    const ad::Var a = affinity(q, k);
    return ad::matmul(ad::masked_softmax_rows(a, Tensor({a.shape()[1]})), v);
}

Tensor self_attention(const AttentionBlock& block, const Tensor& queries)
{
    attention_width(block);
    ad::Tape tape;
    return self_attention(as_constants(tape, block), tape.constant(queries)).value();
}

}  // namespace dcsam
