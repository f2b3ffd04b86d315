#include "dcsam/losses.hpp"

#include <algorithm>
#include <cmath>

#include "dcsam/errors.hpp"

namespace dcsam {
namespace {

void check_pair(const Tensor& p, const Tensor& y, const char* op)
{
    require_same_shape(p, y, op);
    require_finite(p, op);
    require_finite(y, op);
}

double clamp_prob(double p) { return std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp); }

struct DiceTerms {
    double overlap = 0.0;
    double denom = kDiceEpsilon;
};

DiceTerms dice_terms(const Tensor& p, const Tensor& y)
{
    DiceTerms t;
    for (std::size_t i = 0; i < p.size(); ++i) {
        t.overlap += p[i] * y[i];
        t.denom += p[i] * p[i] + y[i] * y[i];
    }
    return t;
}

}  // namespace

double bce_loss(const Tensor& p, const Tensor& y)
{
    check_pair(p, y, "bce_loss");
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double q = clamp_prob(p[i]);
        total += y[i] * std::log(q) + (1.0 - y[i]) * std::log(1.0 - q);
    }
    return -total / static_cast<double>(p.size());
}

double dice_loss(const Tensor& p, const Tensor& y)
{
    check_pair(p, y, "dice_loss");
    const DiceTerms t = dice_terms(p, y);
    return 1.0 - 2.0 * t.overlap / t.denom;
}

double total_loss(const Tensor& p, const Tensor& y) { return bce_loss(p, y) + dice_loss(p, y); }

ad::Var bce_loss(ad::Var p, const Tensor& y)
{
    const double value = bce_loss(p.value(), y);
    return p.tape().record(Tensor::scalar(value), {p}, [y](const ad::BackwardContext& c) {
        const Tensor& pv = *c.inputs[0];
        const double scale = c.grad[0] / static_cast<double>(pv.size());
        Tensor& dp = *c.input_grads[0];
        for (std::size_t i = 0; i < pv.size(); ++i) {
            if (pv[i] < kProbabilityClamp || pv[i] > 1.0 - kProbabilityClamp) continue;
            dp[i] += scale * (-y[i] / pv[i] + (1.0 - y[i]) / (1.0 - pv[i]));
        }
    });
}

ad::Var dice_loss(ad::Var p, const Tensor& y)
{
    const double value = dice_loss(p.value(), y);
    return p.tape().record(Tensor::scalar(value), {p}, [y](const ad::BackwardContext& c) {
        const Tensor& pv = *c.inputs[0];
        const DiceTerms t = dice_terms(pv, y);
        Tensor& dp = *c.input_grads[0];
        // d/dp_i of -2·S/D = -2·(y_i·D - S·2p_i) / D².
        for (std::size_t i = 0; i < pv.size(); ++i)
            dp[i] += c.grad[0] * -2.0 * (y[i] * t.denom - 2.0 * pv[i] * t.overlap) /
                     (t.denom * t.denom);
    });
}

ad::Var total_loss(ad::Var p, const Tensor& y) { return ad::add(bce_loss(p, y), dice_loss(p, y)); }

}  // namespace dcsam
