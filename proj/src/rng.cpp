#include "dcsam/rng.hpp"

#include <cmath>
#include <numbers>

#include "dcsam/errors.hpp"

namespace dcsam {

std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path)
{
    std::uint64_t h = mix64(seed);
    for (std::uint64_t part : path) h = mix64(h ^ mix64(part + 0x632BE59BD9B4E019ull));
    return h;
}

double CounterRng::uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

std::int64_t CounterRng::uniform_int(std::int64_t lo, std::int64_t hi)
{
    if (hi < lo) throw InvalidArgument("uniform_int: empty range");
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<std::int64_t>((*this)());
    // Rejection keeps the draw unbiased.
    const std::uint64_t limit = max() - max() % span;
    std::uint64_t r;
    do {
        r = (*this)();
    } while (r >= limit);
    return lo + static_cast<std::int64_t>(r % span);
}

double CounterRng::normal()
{
    // Box-Muller; one variate per call keeps the counter arithmetic simple.
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Tensor CounterRng::normal_tensor(Shape shape, double stddev)
{
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = stddev * normal();
    return t;
}

}  // namespace dcsam
