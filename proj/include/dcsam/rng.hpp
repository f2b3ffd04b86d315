#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>

#include "dcsam/tensor.hpp"

namespace dcsam {

/// SplitMix64 finalizer; a bijective 64-bit mixer.
constexpr std::uint64_t mix64(std::uint64_t z)
{
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

/// Child seed for a labelled sub-stream, e.g. derive_seed(seed, class_id, index).
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

/// Counter-based generator: draw k is mix64(key ^ mix64(k)), so any draw is
/// addressable and streams split without shared state. Satisfies
/// UniformRandomBitGenerator; the distributions below are hand-rolled so the
/// sequence is identical on every standard library.
class CounterRng {
   public:
    using result_type = std::uint64_t;

    explicit CounterRng(std::uint64_t key) : key_(mix64(key)) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() { return mix64(key_ ^ mix64(counter_++)); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [lo, hi], inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
    double normal();
    bool bernoulli(double p) { return uniform() < p; }

    Tensor normal_tensor(Shape shape, double stddev);

    CounterRng split(std::uint64_t tag) const { return CounterRng(key_ ^ mix64(tag + 0x5851F42D4C957F2Dull)); }

   private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace dcsam
