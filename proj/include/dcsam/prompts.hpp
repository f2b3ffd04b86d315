#pragma once

#include "dcsam/autodiff.hpp"
#include "dcsam/tensor.hpp"

namespace dcsam {

/// Positive and negative prompt rows, raw and after adding the label embeddings.
struct PromptSet {
    Tensor pos;          // N×d
    Tensor neg;          // N×d
    Tensor pos_labeled;  // pos + E_pos on every row
    Tensor neg_labeled;  // neg + E_neg on every row
};

PromptSet label_prompts(const Tensor& pos, const Tensor& neg, const Tensor& e_pos,
                        const Tensor& e_neg);

ad::Var label_prompts(ad::Var prompts, ad::Var embedding);

}  // namespace dcsam
