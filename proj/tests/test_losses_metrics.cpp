#include <cmath>
#include <set>
#include <utility>

#include <gtest/gtest.h>

#include "dcsam/errors.hpp"
#include "dcsam/losses.hpp"
#include "dcsam/metrics.hpp"
#include "test_support.hpp"

using namespace dcsam;

namespace {

// Boundary pixels and tolerance matching, recomputed from pixel coordinate sets.
using Pixels = std::set<std::pair<int, int>>;

Pixels boundary_pixels(const Tensor& m)
{
    const int h = static_cast<int>(m.dim(0)), w = static_cast<int>(m.dim(1));
    auto fg = [&](int y, int x) { return y >= 0 && x >= 0 && y < h && x < w && m.at(y, x) > 0.5; };
    Pixels out;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (fg(y, x) && (!fg(y - 1, x) || !fg(y + 1, x) || !fg(y, x - 1) || !fg(y, x + 1))) out.insert({y, x});
    return out;
}

double matched_fraction(const Pixels& from, const Pixels& to, int tol)
{
    int hit = 0;
    for (auto [y, x] : from)
        for (auto [v, u] : to)
            if (std::abs(y - v) <= tol && std::abs(x - u) <= tol) {
                ++hit;
                break;
            }
    return static_cast<double>(hit) / static_cast<double>(from.size());
}

double boundary_f_oracle(const Tensor& pred, const Tensor& gt, int tol)
{
    const Pixels bp = boundary_pixels(pred), bg = boundary_pixels(gt);
    const double p = matched_fraction(bp, bg, tol), r = matched_fraction(bg, bp, tol);
    return p + r == 0 ? 0 : 2 * p * r / (p + r);
}

Tensor square(std::size_t size, std::size_t y0, std::size_t x0, std::size_t side)
{
    Tensor m({size, size}, 0.0);
    for (std::size_t y = y0; y < y0 + side; ++y)
        for (std::size_t x = x0; x < x0 + side; ++x) m.at(y, x) = 1;
    return m;
}

}  // namespace

TEST(Bce, HandCases)
{
    EXPECT_NEAR(bce_loss(Tensor({2, 2}, 0.5), Tensor::matrix({{1, 0}, {0, 1}})), std::log(2.0), 1e-9);
    const Tensor y = Tensor::matrix({{1, 0}, {1, 1}});
    EXPECT_LE(bce_loss(y, y), 1e-6);
    // -(ln 0.8 + ln 0.6) / 2
    const double expected = -(std::log(0.8) + std::log(0.6)) / 2;
    EXPECT_NEAR(bce_loss(Tensor::vector({0.8, 0.4}), Tensor::vector({1, 0})), expected, 1e-12);
    EXPECT_NEAR(expected, 0.3669846, 1e-7);
}

TEST(Dice, HandCases)
{
    const Tensor y = Tensor::matrix({{1, 0}, {1, 1}});
    EXPECT_NEAR(dice_loss(y, y), 0.0, 2e-6);
    EXPECT_NEAR(dice_loss(Tensor::vector({1, 1, 0, 0}), Tensor::vector({0, 0, 1, 1})), 1.0, 2e-6);
    EXPECT_NEAR(dice_loss(Tensor::vector({1, 1, 0, 0}), Tensor::vector({1, 0, 0, 0})), 1.0 / 3, 1e-6);
}

TEST(TotalLoss, ComposesExactly)
{
    const Tensor p({2, 2}, 0.5), y = Tensor::matrix({{1, 1}, {0, 0}});
    EXPECT_EQ(total_loss(p, y), bce_loss(p, y) + dice_loss(p, y));
    // Dice at p = 0.5 on two of four ones: 1 - 2·1/(Σp² + Σy² + ε) with Σp² = 1.
    const double dice = 1 - 2.0 / (3.0 + kDiceEpsilon);
    EXPECT_NEAR(total_loss(p, y), std::log(2.0) + dice, 1e-9);
    EXPECT_NEAR(total_loss(y, y), 0.0, 2e-6);

    CounterRng rng(1);
    for (int t = 0; t < 20; ++t) {
        Tensor q({3, 3});
        for (std::size_t i = 0; i < 9; ++i) q[i] = rng.uniform(0.05, 0.95);
        const Tensor yy = test::random_binary({3, 3}, rng);
        ad::Tape tape;
        const ad::Var v = tape.constant(q);
        EXPECT_EQ(total_loss(v, yy).value().item(),
                  bce_loss(v, yy).value().item() + dice_loss(v, yy).value().item());
    }
}

TEST(Losses, Gradients)
{
    CounterRng rng(2);
    Tensor p({3, 3});
    for (std::size_t i = 0; i < 9; ++i) p[i] = rng.uniform(0.1, 0.9);
    const Tensor y = Tensor::matrix({{1, 0, 1}, {0, 0, 1}, {1, 1, 0}});
    EXPECT_LT(test::gradient_error([&](ad::Tape&, auto& x) { return bce_loss(x[0], y); }, {p}), 1e-6);
    EXPECT_LT(test::gradient_error([&](ad::Tape&, auto& x) { return dice_loss(x[0], y); }, {p}), 1e-6);
    EXPECT_LT(test::gradient_error([&](ad::Tape&, auto& x) { return total_loss(x[0], y); }, {p}), 1e-6);
}

TEST(Losses, RejectBadInputs)
{
    EXPECT_THROW(bce_loss(Tensor::vector({0.5}), Tensor::vector({1, 0})), ShapeMismatch);
    EXPECT_THROW(bce_loss(Tensor::vector({NAN, 0.5}), Tensor::vector({1, 0})), NonFiniteInput);
}

TEST(Iou, HandCases)
{
    EXPECT_EQ(iou(Tensor::matrix({{1, 1}, {0, 0}}), Tensor::matrix({{1, 0}, {0, 0}})), 0.5);
    const Tensor a = Tensor::matrix({{1, 0}, {1, 0}});
    EXPECT_EQ(iou(a, a), 1.0);
    EXPECT_EQ(iou(a, Tensor::matrix({{0, 1}, {0, 1}})), 0.0);
    EXPECT_EQ(iou(Tensor({2, 2}, 0.0), Tensor({2, 2}, 0.0)), 1.0);
}

TEST(Iou, SymmetricAndFlipInvariant)
{
    CounterRng rng(3);
    for (int t = 0; t < 50; ++t) {
        const Tensor a = test::random_binary({4, 5}, rng), b = test::random_binary({4, 5}, rng);
        EXPECT_EQ(iou(a, b), iou(b, a));
        Tensor fa(a.shape()), fb(b.shape());
        for (std::size_t y = 0; y < 4; ++y)
            for (std::size_t x = 0; x < 5; ++x) {
                fa.at(y, x) = a.at(y, 4 - x);
                fb.at(y, x) = b.at(y, 4 - x);
            }
        EXPECT_EQ(iou(fa, fb), iou(a, b));
    }
}

TEST(Miou, Cases)
{
    EXPECT_NEAR(miou({{1, 0.5}, {2, 0.7}}), 0.6, 1e-15);
    EXPECT_EQ(miou({{4, 0.3}}), 0.3);
    EXPECT_EQ(miou({{1, 0.5}, {2, 0.7}}), miou({{9, 0.5}, {0, 0.7}}));
    EXPECT_THROW(miou({}), EmptyReport);
}

TEST(BoundaryF, Cases)
{
    const Tensor gt = square(7, 2, 2, 3);
    EXPECT_EQ(boundary_f(gt, gt, 0), 1.0);
    EXPECT_EQ(boundary_f(Tensor({7, 7}, 0.0), gt, 2), 0.0);
    EXPECT_EQ(boundary_f(Tensor({7, 7}, 0.0), Tensor({7, 7}, 0.0), 2), 1.0);

    const Tensor shifted = square(7, 2, 3, 3);
    EXPECT_EQ(boundary_f(shifted, gt, 1), 1.0);
    EXPECT_DOUBLE_EQ(boundary_f(shifted, gt, 0), boundary_f_oracle(shifted, gt, 0));
    EXPECT_DOUBLE_EQ(boundary_f(shifted, gt, 0), 0.5);
}

TEST(BoundaryF, SymmetricAndMatchesPixelSetOracle)
{
    CounterRng rng(4);
    for (int t = 0; t < 50; ++t) {
        const Tensor a = test::random_binary({6, 7}, rng, 0.4), b = test::random_binary({6, 7}, rng, 0.4);
        for (std::size_t tol : {0u, 1u, 2u}) {
            EXPECT_EQ(boundary_f(a, b, tol), boundary_f(b, a, tol));
            EXPECT_NEAR(boundary_f(a, b, tol), boundary_f_oracle(a, b, static_cast<int>(tol)), 1e-15);
        }
    }
}

TEST(BoundaryF, DefaultTolerance)
{
    EXPECT_EQ(default_boundary_tolerance(24, 24), 1u);  // 0.8% of 33.9
    EXPECT_EQ(default_boundary_tolerance(480, 854), 8u);
}

TEST(JfScore, Cases)
{
    const std::vector<Tensor> masks{square(6, 1, 1, 3), square(6, 2, 2, 2)};
    const MetricReport same = jf_score(masks, masks, 1);
    EXPECT_EQ(same.j, 1.0);
    EXPECT_EQ(same.f, 1.0);
    EXPECT_EQ(same.jf, 1.0);
    EXPECT_THROW(jf_score(masks, std::vector<Tensor>{masks[0]}, 1), FrameCountMismatch);

    const std::vector<double> j{0.5, 0.7}, f{0.9, 0.7};
    const MetricReport r = summarize_frames(j, f);
    EXPECT_EQ(r.j, 0.6);
    EXPECT_EQ(r.f, 0.8);
    EXPECT_EQ(r.jf, 0.7);
}

TEST(JfScore, ArithmeticFromFrames)
{
    // Frame 0: J = 0.5 (2 of 4 pixels); frame 1: identical masks.
    const Tensor gt0 = Tensor::matrix({{1, 1}, {1, 1}}), pr0 = Tensor::matrix({{1, 1}, {0, 0}});
    const Tensor m1 = Tensor::matrix({{1, 0}, {0, 0}});
    const std::vector<Tensor> pred{pr0, m1}, gt{gt0, m1};
    const MetricReport r = jf_score(pred, gt, 0);
    EXPECT_EQ(r.j, 0.75);
    const double f0 = boundary_f_oracle(pr0, gt0, 0);
    EXPECT_DOUBLE_EQ(r.f, (f0 + 1.0) / 2);
    EXPECT_DOUBLE_EQ(r.jf, (r.j + r.f) / 2);
}

TEST(Reports, CsvAndJsonLayout)
{
    MetricReport r;
    r.per_class_iou = {{0, 0.5}, {1, 0.25}};
    r.miou = 0.375;
    r.j = 0.4;
    r.f = 0.6;
    r.jf = 0.5;
    const std::string csv = format_report_csv(2, r);
    EXPECT_EQ(csv.rfind("fold,class_id,iou\n2,0,0.500000\n2,1,0.250000\n", 0), 0u);
    EXPECT_NE(csv.find("# summary fold=2 miou=0.375000"), std::string::npos);

    const std::string json = format_summary_json({{0, r}, {1, r}, {2, r}, {3, r}});
    for (const char* key : {"\"fold_0\"", "\"fold_3\"", "\"miou\"", "\"jf\""})
        EXPECT_NE(json.find(key), std::string::npos) << key;
}
