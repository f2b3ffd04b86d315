#include "dcsam/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <vector>

#include "json.hpp"

#include "dcsam/attention.hpp"
#include "dcsam/errors.hpp"

namespace dcsam {
namespace {

void check_masks(const Tensor& pred, const Tensor& gt, const char* op)
{
    require_same_shape(pred, gt, op);
    require_binary_mask(pred, op);
    require_binary_mask(gt, op);
}

// Fraction of `from` boundary pixels with a `to` boundary pixel within tol.
double matched_fraction(const Tensor& from, const Tensor& to, std::size_t tol)
{
    const std::size_t h = from.dim(0), w = from.dim(1);
    std::size_t total = 0, hits = 0;
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            if (from.at(y, x) == 0.0) continue;
            ++total;
            const std::size_t y0 = y >= tol ? y - tol : 0, y1 = std::min(h - 1, y + tol);
            const std::size_t x0 = x >= tol ? x - tol : 0, x1 = std::min(w - 1, x + tol);
            bool found = false;
            for (std::size_t yy = y0; yy <= y1 && !found; ++yy)
                for (std::size_t xx = x0; xx <= x1 && !found; ++xx) found = to.at(yy, xx) != 0.0;
            hits += found;
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

std::string fmt_double(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace

double iou(const Tensor& pred, const Tensor& gt)
{
    check_masks(pred, gt, "iou");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool a = pred[i] != 0.0, b = gt[i] != 0.0;
        inter += a && b;
        uni += a || b;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double miou(const std::map<int, double>& per_class)
{
    if (per_class.empty()) throw EmptyReport("no classes to average");
    double total = 0.0;
    for (const auto& [cls, value] : per_class) total += value;
    return total / static_cast<double>(per_class.size());
}

Tensor boundary_map(const Tensor& mask)
{
    require_rank(mask, 2, "boundary_map");
    require_binary_mask(mask, "boundary_map");
    const std::size_t h = mask.dim(0), w = mask.dim(1);
    Tensor out({h, w});
    auto bg = [&](std::ptrdiff_t y, std::ptrdiff_t x) {
        if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(h) ||
            x >= static_cast<std::ptrdiff_t>(w))
            return true;
        return mask.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) == 0.0;
    };
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            if (mask.at(y, x) == 0.0) continue;
            const auto iy = static_cast<std::ptrdiff_t>(y), ix = static_cast<std::ptrdiff_t>(x);
            if (bg(iy - 1, ix) || bg(iy + 1, ix) || bg(iy, ix - 1) || bg(iy, ix + 1))
                out.at(y, x) = 1.0;
        }
    }
    return out;
}

std::size_t default_boundary_tolerance(std::size_t height, std::size_t width)
{
    const double diag = std::hypot(static_cast<double>(height), static_cast<double>(width));
    return static_cast<std::size_t>(std::ceil(0.008 * diag));
}

double boundary_f(const Tensor& pred, const Tensor& gt, std::size_t tol)
{
    check_masks(pred, gt, "boundary_f");
    require_rank(pred, 2, "boundary_f");
    const Tensor pb = boundary_map(pred);
    const Tensor gb = boundary_map(gt);
    const bool pred_empty = sum(pb) == 0.0, gt_empty = sum(gb) == 0.0;
    if (pred_empty && gt_empty) return 1.0;
    if (pred_empty || gt_empty) return 0.0;
    const double precision = matched_fraction(pb, gb, tol);
    const double recall = matched_fraction(gb, pb, tol);
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

MetricReport summarize_frames(std::span<const double> j, std::span<const double> f)
{
    if (j.size() != f.size())
        throw FrameCountMismatch(std::to_string(j.size()) + " J values vs " + std::to_string(f.size()) +
                                 " F values");
    if (j.empty()) throw EmptyReport("no frames");
    MetricReport report;
    for (std::size_t t = 0; t < j.size(); ++t) {
        report.j += j[t];
        report.f += f[t];
    }
    const double frames = static_cast<double>(j.size());
    report.j /= frames;
    report.f /= frames;
    report.jf = (report.j + report.f) / 2.0;
    return report;
}

MetricReport jf_score(std::span<const Tensor> pred_masks, std::span<const Tensor> gt_masks,
                      std::size_t tol)
{
    if (pred_masks.size() != gt_masks.size())
        throw FrameCountMismatch(std::to_string(pred_masks.size()) + " predicted frames vs " +
                                 std::to_string(gt_masks.size()) + " ground-truth frames");
    std::vector<double> j, f;
    for (std::size_t t = 0; t < pred_masks.size(); ++t) {
        j.push_back(iou(pred_masks[t], gt_masks[t]));
        f.push_back(boundary_f(pred_masks[t], gt_masks[t], tol));
    }
    return summarize_frames(j, f);
}

std::string format_report_csv(int fold, const MetricReport& report)
{
    std::ostringstream os;
    os << "fold,class_id,iou\n";
    for (const auto& [cls, value] : report.per_class_iou)
        os << fold << ',' << cls << ',' << fmt_double(value) << '\n';
    os << "# summary fold=" << fold << " miou=" << fmt_double(report.miou)
       << " j=" << fmt_double(report.j) << " f=" << fmt_double(report.f)
       << " jf=" << fmt_double(report.jf) << '\n';
    return os.str();
}

std::string format_summary_json(const std::map<int, MetricReport>& by_fold)
{
    nlohmann::ordered_json doc = nlohmann::ordered_json::object();
    for (const auto& [fold, report] : by_fold) {
        doc["fold_" + std::to_string(fold)] = {
            {"miou", report.miou}, {"j", report.j}, {"f", report.f}, {"jf", report.jf}};
    }
    return doc.dump(2) + "\n";
}

}  // namespace dcsam
