#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace difflab {

// Counter-based random numbers: every draw is a pure function of
// (seed, path, step, coord, lane). Streams can be evaluated in any order,
// from any thread, and any sub-block of an ensemble is reproducible on its
// own. Mixing is the splitmix64 finalizer applied per key component.
namespace rng_detail {

inline constexpr std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace rng_detail

class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t bits(std::uint64_t path, std::uint64_t step,
                       std::uint64_t coord, std::uint64_t lane) const {
        using rng_detail::mix64;
        std::uint64_t h = mix64(seed_ ^ 0x243f6a8885a308d3ULL);
        h = mix64(h ^ (path * 0x452821e638d01377ULL));
        h = mix64(h ^ (step * 0xc0ac29b7c97c50ddULL));
        h = mix64(h ^ (coord * 0x3f84d5b5b5470917ULL));
        h = mix64(h ^ lane);
        return h;
    }

    // Uniform on (0,1): top 53 bits, offset keeps it strictly positive.
    double uniform(std::uint64_t path, std::uint64_t step,
                   std::uint64_t coord, std::uint64_t lane) const {
        const std::uint64_t b = bits(path, step, coord, lane);
        return (static_cast<double>(b >> 11) + 0.5) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller on lanes (2k, 2k+1).
    double normal(std::uint64_t path, std::uint64_t step,
                  std::uint64_t coord, std::uint64_t pair = 0) const {
        const double u1 = uniform(path, step, coord, 2 * pair);
        const double u2 = uniform(path, step, coord, 2 * pair + 1);
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
};

// xoshiro256** engine, cheap to seed per work item from counter bits; models
// UniformRandomBitGenerator for use with <random> distributions.
class Xoshiro256 {
public:
    using result_type = std::uint64_t;
    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return ~result_type{0}; }

    explicit Xoshiro256(std::uint64_t seed) {
        using rng_detail::mix64;
        s_[0] = mix64(seed ^ 0x8a5cd789635d2dffULL);
        s_[1] = mix64(s_[0] ^ 0x121fd2155c472f96ULL);
        s_[2] = mix64(s_[1]);
        s_[3] = mix64(s_[2]);
    }

    result_type operator()() {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }
    std::uint64_t s_[4];
};

}  // namespace difflab
