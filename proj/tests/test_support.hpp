#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include <gtest/gtest.h>

#include "dcsam/autodiff.hpp"
#include "dcsam/rng.hpp"
#include "dcsam/tensor.hpp"

namespace dcsam::test {

inline Tensor random_tensor(Shape shape, CounterRng& rng, double stddev = 1.0)
{
    return rng.normal_tensor(std::move(shape), stddev);
}

inline Tensor random_binary(Shape shape, CounterRng& rng, double p = 0.5)
{
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.bernoulli(p) ? 1.0 : 0.0;
    return t;
}

/// Scalar loss of several tensors, written against the tape.
using VarLoss = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

/// Worst relative error between tape gradients and central differences over
/// every coordinate of every input.
inline double gradient_error(const VarLoss& loss, std::vector<Tensor> inputs, double h = 1e-5)
{
    std::vector<Tensor> analytic;
    {
        ad::Tape tape;
        std::vector<ad::Var> vars;
        for (std::size_t k = 0; k < inputs.size(); ++k)
            vars.push_back(tape.parameter("x" + std::to_string(k), inputs[k]));
        const auto grads = ad::grad(tape, loss(tape, vars));
        for (std::size_t k = 0; k < inputs.size(); ++k) analytic.push_back(grads.at("x" + std::to_string(k)));
    }
    auto value = [&](const std::vector<Tensor>& xs) {
        ad::Tape tape;
        std::vector<ad::Var> vars;
        for (const Tensor& x : xs) vars.push_back(tape.constant(x));
        return loss(tape, vars).value().item();
    };
    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k)
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            const double x0 = inputs[k][i];
            inputs[k][i] = x0 + h;
            const double up = value(inputs);
            inputs[k][i] = x0 - h;
            const double down = value(inputs);
            inputs[k][i] = x0;
            const double numeric = (up - down) / (2 * h);
            const double a = analytic[k][i];
            worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6}));
        }
    return worst;
}

/// Fixed random weights turning any tensor into a scalar with a non-trivial
/// gradient: sum(w ∘ x).
inline ad::Var weighted_sum(ad::Tape& tape, ad::Var x, std::uint64_t seed = 99)
{
    CounterRng rng(seed);
    return ad::sum(ad::hadamard(x, tape.constant(rng.normal_tensor(x.shape(), 1.0))));
}

/// Identity in the forward pass with a backward rule that is 50% too large.
/// Negative control: any working gradient check must reject it.
inline ad::Var corrupted_identity(ad::Var x)
{
    return x.tape().record(x.value(), {x}, [](const ad::BackwardContext& c) {
        if (c.input_grads[0]) *c.input_grads[0] = add(*c.input_grads[0], scale(c.grad, 1.5));
    });
}

}  // namespace dcsam::test
