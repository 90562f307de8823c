#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace gnaq {

// All randomness flows through std::mt19937_64 plus the helpers below.
// The engine's output sequence is pinned by the standard; the standard
// library *distributions* are not, so we roll our own transforms to keep
// seeded runs reproducible across toolchains.
using Rng = std::mt19937_64;

// Uniform integer in [0, bound), unbiased via rejection.
inline std::uint64_t rng_below(Rng& rng, std::uint64_t bound) {
    if (bound == 0) return 0;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % bound;
}

// Uniform double in [0, 1) with 53 random bits.
inline double rng_unit(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Box-Muller normal draw (cacheless; one uniform pair per sample).
inline double rng_normal(Rng& rng, double mean = 0.0, double stddev = 1.0) {
    double u1;
    do {
        u1 = rng_unit(rng);
    } while (u1 <= 0.0);
    const double u2 = rng_unit(rng);
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * 3.14159265358979323846 * u2);
}

// Derives an independent stream from a base seed and a stream tag.
inline std::uint64_t rng_stream_seed(std::uint64_t seed, std::uint64_t tag) {
    // splitmix64 finalizer over seed ^ tag
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace gnaq
