#include "dcsam/oracles.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "dcsam/attention.hpp"
#include "dcsam/episodes.hpp"
#include "dcsam/gradcheck.hpp"
#include "dcsam/pipeline.hpp"
#include "dcsam/rng.hpp"

namespace dcsam::oracle {
namespace {

class Timer {
   public:
    double seconds() const
    {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

   private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

Tensor random_matrix(std::size_t rows, std::size_t cols, CounterRng& rng, bool integer)
{
    Tensor t({rows, cols});
    for (std::size_t i = 0; i < t.size(); ++i)
        t[i] = integer ? static_cast<double>(rng.uniform_int(-2, 2)) : rng.normal();
    return t;
}

Tensor random_mask(std::size_t n, CounterRng& rng)
{
    Tensor m({n});
    for (std::size_t i = 0; i < n; ++i) m[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    return m;
}

void record(SuiteResult& r, bool ok, const std::string& what)
{
    if (ok) {
        ++r.passed;
    } else {
        if (r.failed == 0) r.first_failure = what;
        ++r.failed;
    }
}

}  // namespace

Tensor affinity(const Tensor& queries, const Tensor& keys)
{
    const std::size_t n = queries.dim(0), hw = keys.dim(0), d = queries.dim(1);
    Tensor a({n, hw});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < hw; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) s += queries.at(i, k) * keys.at(j, k);
            a.at(i, j) = s / std::sqrt(static_cast<double>(d));
        }
    return a;
}

std::vector<bool> cycle_keep(const Tensor& a, const Tensor& mask_flat)
{
    const std::size_t n = a.dim(0), hw = a.dim(1);
    std::vector<bool> keep(hw);
    for (std::size_t j = 0; j < hw; ++j) {
        std::size_t i_star = 0;
        for (std::size_t i = 1; i < n; ++i)
            if (a.at(i, j) > a.at(i_star, j)) i_star = i;
        std::size_t j_star = 0;
        for (std::size_t jj = 1; jj < hw; ++jj)
            if (a.at(i_star, jj) > a.at(i_star, j_star)) j_star = jj;
        keep[j] = mask_flat[j] == mask_flat[j_star];
    }
    return keep;
}

Tensor masked_softmax(const Tensor& x, const std::vector<std::vector<bool>>& keep)
{
    Tensor out(x.shape(), 0.0);
    for (std::size_t r = 0; r < x.dim(0); ++r) {
        double mx = -INFINITY;
        for (std::size_t c = 0; c < x.dim(1); ++c)
            if (keep[r][c]) mx = std::max(mx, x.at(r, c));
        double z = 0.0;
        for (std::size_t c = 0; c < x.dim(1); ++c)
            if (keep[r][c]) z += std::exp(x.at(r, c) - mx);
        for (std::size_t c = 0; c < x.dim(1); ++c)
            if (keep[r][c]) out.at(r, c) = std::exp(x.at(r, c) - mx) / z;
    }
    return out;
}

SuiteResult run_cyc_suite(std::size_t trials, std::uint64_t seed)
{
    SuiteResult r;
    r.name = "cyc";
    Timer timer;
    for (std::size_t t = 0; t < trials; ++t) {
        CounterRng rng(derive_seed(seed, {t}));
        const auto n = static_cast<std::size_t>(rng.uniform_int(1, 4));
        const auto hw = static_cast<std::size_t>(rng.uniform_int(1, 9));
        const auto d = static_cast<std::size_t>(rng.uniform_int(1, 4));
        const bool ties = t % 2 == 1;
        const Tensor q = random_matrix(n, d, rng, ties);
        const Tensor k = random_matrix(hw, d, rng, ties);
        const Tensor mask = random_mask(hw, rng);

        const std::vector<bool> expected = cycle_keep(oracle::affinity(q, k), mask);
        const CycleBias bias = cycle_bias(dcsam::affinity(q, k), mask);
        bool same = bias.values.size() == hw;
        for (std::size_t j = 0; same && j < hw; ++j)
            same = expected[j] ? bias.values[j] == 0.0 : bias.values[j] == kMaskedBias;
        std::ostringstream what;
        what << "trial " << t << " (N=" << n << " HW=" << hw << " d=" << d << ")";
        record(r, same, what.str());
    }
    r.seconds = timer.seconds();
    return r;
}

SuiteResult run_softmax_suite(std::size_t trials, std::uint64_t seed)
{
    SuiteResult r;
    r.name = "softmax";
    Timer timer;
    for (std::size_t t = 0; t < trials; ++t) {
        CounterRng rng(derive_seed(seed, {t}));
        const auto n = static_cast<std::size_t>(rng.uniform_int(1, 6));
        const auto hw = static_cast<std::size_t>(rng.uniform_int(1, 16));
        const auto d = static_cast<std::size_t>(rng.uniform_int(1, 6));
        const Tensor a = dcsam::affinity(random_matrix(n, d, rng, false), random_matrix(hw, d, rng, false));
        const CycleBias bias = cycle_bias(a, random_mask(hw, rng));
        const Tensor p = masked_softmax_rows(a, bias.values);

        std::vector<std::vector<bool>> keep(n, std::vector<bool>(hw));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < hw; ++j) keep[i][j] = bias.values[j] == 0.0;
        const Tensor expected = masked_softmax(a, keep);

        bool ok = max_abs_diff(p, expected) <= 1e-12;
        for (std::size_t i = 0; ok && i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < hw; ++j) {
                s += p.at(i, j);
                if (!keep[i][j] && p.at(i, j) != 0.0) ok = false;
            }
            ok = ok && std::abs(s - 1.0) <= 1e-9;
        }
        record(r, ok, "trial " + std::to_string(t));
    }
    r.seconds = timer.seconds();
    return r;
}

SuiteResult run_grad_suite(std::size_t trials, std::uint64_t seed)
{
    SuiteResult r;
    r.name = "grad";
    Timer timer;
    const ModelConfig config;
    for (std::size_t t = 0; t < trials; ++t) {
        const std::uint64_t s = derive_seed(seed, {t});
        const int cls = static_cast<int>(s % kNumClasses);
        const Episode e = gen_episode(cls, s, Canvas{8, 8});
        GradCheckOptions options;
        options.seed = s;
        const GradCheckReport report = grad_check(init_params(config, s), e, config, options);
        std::ostringstream what;
        what << "trial " << t << ": " << report.worst_parameter << " rel. err " << report.worst;
        record(r, report.passed, what.str());
    }
    r.seconds = timer.seconds();
    return r;
}

}  // namespace dcsam::oracle
