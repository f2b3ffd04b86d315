#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>

#include "dcsam/tensor.hpp"

namespace dcsam {

struct MetricReport {
    std::map<int, double> per_class_iou;
    double miou = 0.0;
    double j = 0.0;
    double f = 0.0;
    double jf = 0.0;
};

/// |pred ∩ gt| / |pred ∪ gt|; 1 when both masks are empty.
double iou(const Tensor& pred, const Tensor& gt);

/// Arithmetic mean of the values. Throws EmptyReport on an empty map.
double miou(const std::map<int, double>& per_class);

/// Foreground pixels with a 4-neighbour that is background or off-canvas.
Tensor boundary_map(const Tensor& mask);

/// ceil(0.8% of the image diagonal).
std::size_t default_boundary_tolerance(std::size_t height, std::size_t width);

/// Boundary F-measure. Precision is the fraction of predicted boundary pixels
/// within Chebyshev distance tol of a ground-truth boundary pixel; recall is the
/// mirror image. 0 when P + R = 0, 1 when both boundaries are empty.
double boundary_f(const Tensor& pred, const Tensor& gt, std::size_t tol);

/// Means of per-frame J and F values; J&F is their average.
MetricReport summarize_frames(std::span<const double> j, std::span<const double> f);

/// Per-frame IoU and boundary F averaged over a clip.
MetricReport jf_score(std::span<const Tensor> pred_masks, std::span<const Tensor> gt_masks,
                      std::size_t tol);

/// `fold,class_id,iou` rows followed by a `# summary` comment line.
std::string format_report_csv(int fold, const MetricReport& report);
/// {"fold_<k>": {"miou":..,"j":..,"f":..,"jf":..}, ...}
std::string format_summary_json(const std::map<int, MetricReport>& by_fold);

}  // namespace dcsam
