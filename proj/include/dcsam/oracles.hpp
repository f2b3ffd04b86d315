#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dcsam/tensor.hpp"

// Deliberately naive reference implementations. They share no code with the
// kernels they check beyond the Tensor container.
namespace dcsam::oracle {

/// Q·Kᵀ/√d with explicit loops.
Tensor affinity(const Tensor& queries, const Tensor& keys);

/// Recomputes i* and j* from scratch for every support position, scanning
/// with strict '>' so ties resolve to the smallest index.
std::vector<bool> cycle_keep(const Tensor& affinity, const Tensor& mask_flat);

/// Row-wise softmax over the positions where keep is true; others are 0.
Tensor masked_softmax(const Tensor& x, const std::vector<std::vector<bool>>& keep);

struct SuiteResult {
    std::string name;
    std::size_t passed = 0;
    std::size_t failed = 0;
    double seconds = 0.0;
    std::string first_failure;

    bool ok() const { return failed == 0 && passed > 0; }
};

/// Random instances with N ≤ 4, HW ≤ 9, d ≤ 4; every other instance uses
/// small-integer entries so ties are common.
SuiteResult run_cyc_suite(std::size_t trials, std::uint64_t seed);
/// Rows of cycle-biased attention logits must sum to 1 within 1e-9 and match
/// the naive softmax within 1e-12.
SuiteResult run_softmax_suite(std::size_t trials, std::uint64_t seed);
/// Full-pipeline finite-difference check on 8×8 episodes.
SuiteResult run_grad_suite(std::size_t trials, std::uint64_t seed);

}  // namespace dcsam::oracle
