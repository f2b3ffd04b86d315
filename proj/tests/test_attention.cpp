#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "dcsam/attention.hpp"
#include "dcsam/errors.hpp"
#include "dcsam/oracles.hpp"
#include "test_support.hpp"

using namespace dcsam;

namespace {

bool same_pattern(const CycleBias& b, const std::vector<bool>& keep)
{
    if (b.values.size() != keep.size()) return false;
    for (std::size_t j = 0; j < keep.size(); ++j)
        if ((b.values[j] == 0.0) != keep[j]) return false;
    return true;
}

// softmax(x_i·Wq (f_j·Wk)ᵀ/√d + B_j) over j, weighted sum of f_j·Wv, with
// every product written out.
Tensor attention_loops(const AttentionBlock& w, const Tensor& q, const Tensor& f, const std::vector<bool>& keep)
{
    const std::size_t n = q.dim(0), hw = f.dim(0), d = q.dim(1);
    auto project = [&](const Tensor& x, const Tensor& m, std::size_t row) {
        std::vector<double> out(d, 0.0);
        for (std::size_t c = 0; c < d; ++c)
            for (std::size_t k = 0; k < d; ++k) out[c] += x.at(row, k) * m.at(k, c);
        return out;
    };
    Tensor out({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        const auto qi = project(q, w.wq, i);
        std::vector<double> logits(hw, -INFINITY);
        double mx = -INFINITY;
        for (std::size_t j = 0; j < hw; ++j) {
            if (!keep[j]) continue;
            const auto kj = project(f, w.wk, j);
            double s = 0;
            for (std::size_t c = 0; c < d; ++c) s += qi[c] * kj[c];
            logits[j] = s / std::sqrt(static_cast<double>(d));
            mx = std::max(mx, logits[j]);
        }
        double z = 0;
        for (std::size_t j = 0; j < hw; ++j)
            if (keep[j]) z += std::exp(logits[j] - mx);
        for (std::size_t j = 0; j < hw; ++j) {
            if (!keep[j]) continue;
            const double a = std::exp(logits[j] - mx) / z;
            const auto vj = project(f, w.wv, j);
            for (std::size_t c = 0; c < d; ++c) out.at(i, c) += a * vj[c];
        }
    }
    return out;
}

}  // namespace

TEST(Affinity, HandCases)
{
    const Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
    const Tensor a = affinity(eye, eye);
    EXPECT_DOUBLE_EQ(a.at(0, 0), 1 / std::sqrt(2.0));
    EXPECT_EQ(a.at(0, 1), 0.0);

    const Tensor z = affinity(Tensor::matrix({{0, 0}, {1, 2}}), Tensor::matrix({{3, 4}, {5, 6}}));
    EXPECT_EQ(z.at(0, 0), 0.0);
    EXPECT_EQ(z.at(0, 1), 0.0);

    const Tensor s = affinity(Tensor::matrix({{1, 1}}), Tensor::matrix({{2, 0}, {0, 3}}));
    EXPECT_DOUBLE_EQ(s.at(0, 0), 2 / std::sqrt(2.0));
    EXPECT_DOUBLE_EQ(s.at(0, 1), 3 / std::sqrt(2.0));
}

TEST(CycleBias, HandCases)
{
    const CycleBias all = cycle_bias(Tensor::matrix({{0.3, -1, 2}, {5, 0, 1}}), Tensor::vector({1, 1, 1}));
    EXPECT_EQ(all.values, Tensor({3}, 0.0));

    const CycleBias b = cycle_bias(Tensor::matrix({{0.9, 0.8}, {0.1, 0.2}}), Tensor::vector({1, 0}));
    EXPECT_EQ(b.values[0], 0.0);
    EXPECT_EQ(b.values[1], kMaskedBias);

    const CycleBias tie = cycle_bias(Tensor::matrix({{1, 1}}), Tensor::vector({1, 0}));
    EXPECT_EQ(tie.values[0], 0.0);
    EXPECT_EQ(tie.values[1], kMaskedBias);
    EXPECT_EQ(tie.kept(), 1u);
}

TEST(CycleBias, MatchesTripleLoopOracle)
{
    const oracle::SuiteResult r = oracle::run_cyc_suite(1000, 2024);
    EXPECT_EQ(r.passed, 1000u) << r.first_failure;
}

TEST(CycleBias, ScaleInvariant)
{
    CounterRng rng(8);
    for (int t = 0; t < 200; ++t) {
        const Tensor a = rng.normal_tensor({3, 6}, 1);
        const Tensor m = test::random_binary({6}, rng);
        const CycleBias base = cycle_bias(a, m);
        for (double lambda : {0.01, 0.5, 3.0, 1e3}) EXPECT_EQ(cycle_bias(scale(a, lambda), m).values, base.values);
    }
}

TEST(CycleBias, InvariantUnderMaskComplementAndNeverEmpty)
{
    CounterRng rng(9);
    for (int t = 0; t < 500; ++t) {
        const std::size_t n = 1 + t % 4, hw = 1 + t % 9;
        const Tensor a = rng.normal_tensor({n, hw}, 1);
        const Tensor m = test::random_binary({hw}, rng);
        Tensor inv(m.shape());
        for (std::size_t i = 0; i < hw; ++i) inv[i] = 1 - m[i];
        const CycleBias b = cycle_bias(a, m);
        EXPECT_EQ(b.values, cycle_bias(a, inv).values);
        // The global maximum of A is always a fixed point of the round trip.
        EXPECT_GE(b.kept(), 1u);
    }
}

TEST(CycleBias, RejectsNonBinaryMask)
{
    EXPECT_THROW(cycle_bias(Tensor::matrix({{1, 2}}), Tensor::vector({0.5, 1})), InvalidArgument);
    EXPECT_THROW(cycle_bias(Tensor::matrix({{1, 2}}), Tensor::vector({1, 0, 1})), ShapeMismatch);
}

TEST(QCycAttention, SingleKeyReturnsItsValue)
{
    CounterRng rng(10);
    const Tensor q = rng.normal_tensor({3, 2}, 1);
    const Tensor f = Tensor::matrix({{0.7, -1.2}});
    const Tensor out = qcyc_attention(identity_attention(2), q, f, Tensor::vector({1}));
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_DOUBLE_EQ(out.at(i, 0), 0.7);
        EXPECT_DOUBLE_EQ(out.at(i, 1), -1.2);
    }
}

TEST(QCycAttention, AllForegroundEqualsCrossAttention)
{
    for (std::uint64_t s = 0; s < 100; ++s) {
        CounterRng rng(s);
        const std::size_t n = 1 + s % 4, hw = 1 + s % 9, d = 1 + s % 4;
        const AttentionBlock w = s % 2 ? identity_attention(d) : random_attention(d, rng);
        const Tensor q = rng.normal_tensor({n, d}, 1), f = rng.normal_tensor({hw, d}, 1);
        EXPECT_LE(max_abs_diff(qcyc_attention(w, q, f, Tensor({hw}, 1.0)), cross_attention(w, q, f)), 1e-12);
    }
}

TEST(QCycAttention, MatchesBruteForce)
{
    for (std::uint64_t s = 0; s < 50; ++s) {
        CounterRng rng(100 + s);
        const AttentionBlock w = random_attention(3, rng);
        const Tensor q = rng.normal_tensor({2, 3}, 1), f = rng.normal_tensor({3, 3}, 1);
        const Tensor m = test::random_binary({3}, rng);
        const auto keep = oracle::cycle_keep(
            oracle::affinity(matmul(q, w.wq), matmul(f, w.wk)), m);
        EXPECT_LE(max_abs_diff(qcyc_attention(w, q, f, m), attention_loops(w, q, f, keep)), 1e-10);
    }
}

TEST(QCycAttention, QueryPermutationEquivariance)
{
    CounterRng rng(12);
    const AttentionBlock w = random_attention(3, rng);
    const Tensor q = rng.normal_tensor({4, 3}, 1), f = rng.normal_tensor({6, 3}, 1);
    const Tensor m = Tensor::vector({1, 0, 1, 1, 0, 0});
    const std::vector<std::size_t> perm{2, 0, 3, 1};
    Tensor qp({4, 3});
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t c = 0; c < 3; ++c) qp.at(i, c) = q.at(perm[i], c);
    const Tensor out = qcyc_attention(w, q, f, m), outp = qcyc_attention(w, qp, f, m);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(outp.at(i, c), out.at(perm[i], c));
}

TEST(QCycAttention, GradientsWithDetachedBias)
{
    CounterRng rng(13);
    const AttentionBlock w = random_attention(3, rng);
    const Tensor q = rng.normal_tensor({2, 3}, 1), f = rng.normal_tensor({5, 3}, 1);
    const Tensor m = Tensor::vector({1, 0, 0, 1, 1});
    // Freeze the bias at the unperturbed point so the loss is smooth.
    CycleBias frozen;
    {
        ad::Tape tape;
        CycAttentionOptions o;
        o.bias_out = &frozen;
        qcyc_attention(as_constants(tape, w), tape.constant(q), tape.constant(f), m, o);
    }
    CycAttentionOptions replay;
    replay.frozen_bias = &frozen;
    const double err = test::gradient_error(
        [&](ad::Tape& t, auto& x) {
            const AttentionVars v{x[2], x[3], x[4]};
            return test::weighted_sum(t, qcyc_attention(v, x[0], x[1], m, replay));
        },
        {q, f, w.wq, w.wk, w.wv});
    EXPECT_LT(err, 1e-6);
}

TEST(SelfAttention, Cases)
{
    CounterRng rng(14);
    const AttentionBlock w = random_attention(2, rng);
    const Tensor one = Tensor::matrix({{0.3, -0.8}});
    EXPECT_LE(max_abs_diff(self_attention(w, one), matmul(one, w.wv)), 1e-15);

    const Tensor same = Tensor::matrix({{1, 2}, {1, 2}, {1, 2}});
    const Tensor o = self_attention(w, same);
    for (std::size_t i = 1; i < 3; ++i)
        for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(o.at(i, c), o.at(0, c));

    const Tensor q = rng.normal_tensor({3, 2}, 1);
    const std::vector<bool> keep(3, true);
    EXPECT_LE(max_abs_diff(self_attention(w, q), attention_loops(w, q, q, keep)), 1e-10);
}
