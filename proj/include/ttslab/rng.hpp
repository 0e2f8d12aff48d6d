#pragma once

#include <cmath>
#include <cstdint>

#include "ttslab/common.hpp"

namespace ttslab {

// splitmix64; used for seeding and for cheap stateless hashes.
inline u64 splitmix64(u64& state) {
    u64 z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// xoshiro256** seeded via splitmix64. All randomness in the project flows
// through instances of this generator, so runs are reproducible from seeds
// alone; nothing uses std:: distributions (their outputs are
// implementation-defined).
class Rng {
public:
    explicit Rng(u64 seed) {
        u64 sm = seed;
        for (auto& w : s_) w = splitmix64(sm);
    }

    u64 next_u64() {
        const u64 result = rotl(s_[1] * 5, 7) * 9;
        const u64 t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n).
    i64 uniform_int(i64 n) { return static_cast<i64>(next_u64() % static_cast<u64>(n)); }

    // Uniform integer in [lo, hi] inclusive.
    i64 uniform_range(i64 lo, i64 hi) { return lo + uniform_int(hi - lo + 1); }

    // Standard normal via Box-Muller.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Normal truncated to two standard deviations, then scaled; the usual
    // weight-init distribution.
    double truncated_normal(double stddev) {
        double z = normal();
        while (std::fabs(z) > 2.0) z = normal();
        return z * stddev;
    }

    // Derive an independent stream; convenient for per-component seeding.
    Rng split(u64 salt) {
        u64 mix = next_u64() ^ (salt * 0x9e3779b97f4a7c15ULL);
        return Rng(splitmix64(mix));
    }

private:
    static u64 rotl(u64 x, int k) { return (x << k) | (x >> (64 - k)); }
    u64 s_[4] = {};
};

}  // namespace ttslab
