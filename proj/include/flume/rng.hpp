#pragma once

#include <cstdint>

#include "flume/core.hpp"

namespace flume {

// Fully specified generator so runs are reproducible across platforms.
// xoshiro256** seeded via splitmix64.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) { reseed(seed); }

    void reseed(uint64_t seed) {
        uint64_t x = seed;
        for (auto& si : s_) {
            x += 0x9e3779b97f4a7c15ull;
            uint64_t z = x;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
            si = z ^ (z >> 31);
        }
        has_gauss_ = false;
    }

    uint64_t next_u64() {
        uint64_t result = rotl(s_[1] * 5, 7) * 9;
        uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0, 1).
    Real uniform() { return Real(next_u64() >> 11) * 0x1.0p-53; }

    Real uniform(Real lo, Real hi) { return lo + (hi - lo) * uniform(); }

    // Marsaglia polar method.
    Real gaussian() {
        if (has_gauss_) {
            has_gauss_ = false;
            return gauss_;
        }
        Real u, v, q;
        do {
            u = 2 * uniform() - 1;
            v = 2 * uniform() - 1;
            q = u * u + v * v;
        } while (q >= 1 || q == 0);
        Real f = std::sqrt(-2 * std::log(q) / q);
        gauss_ = v * f;
        has_gauss_ = true;
        return u * f;
    }

    uint64_t next_below(uint64_t n) { return next_u64() % n; }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t s_[4];
    bool has_gauss_ = false;
    Real gauss_ = 0;
};

}  // namespace flume
