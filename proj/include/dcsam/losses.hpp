#pragma once

#include "dcsam/autodiff.hpp"
#include "dcsam/tensor.hpp"

namespace dcsam {

inline constexpr double kProbabilityClamp = 1e-7;
inline constexpr double kDiceEpsilon = 1e-6;

/// Mean pixel binary cross-entropy; p is clamped to [1e-7, 1 - 1e-7] first.
double bce_loss(const Tensor& p, const Tensor& y);
/// 1 - 2·Σpy / (Σp² + Σy² + 1e-6).
double dice_loss(const Tensor& p, const Tensor& y);
double total_loss(const Tensor& p, const Tensor& y);

// Tracked variants; the target is a constant. Clamped entries pass no gradient.
ad::Var bce_loss(ad::Var p, const Tensor& y);
ad::Var dice_loss(ad::Var p, const Tensor& y);
ad::Var total_loss(ad::Var p, const Tensor& y);

}  // namespace dcsam
