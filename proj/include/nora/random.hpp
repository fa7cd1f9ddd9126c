#pragma once

#include <cstdint>
#include <initializer_list>

#include <boost/random/mersenne_twister.hpp>

namespace nora {

/// Seeded generator whose output is identical on every platform. The
/// distributions come from Boost.Random, whose algorithms are fixed, unlike
/// the implementation-defined ones in <random>.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform on [0, 1).
    double uniform();
    double uniform(double lo, double hi);
    /// Uniform integer on [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
    double normal(double mean = 0.0, double stddev = 1.0);
    std::int64_t poisson(double mean);

private:
    boost::random::mt19937_64 engine_;
};

/// Mixes a base seed with integer tags into an independent child seed
/// (splitmix64 finalizer applied per tag).
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags);

}  // namespace nora
