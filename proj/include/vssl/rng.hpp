#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace vssl {

// Self-contained PRNG so that every seeded pipeline is bit-reproducible across
// platforms and standard libraries. std::mt19937 is portable but the
// <random> distributions are not, so we roll the few draws we need here.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// xoshiro256++ (Blackman & Vigna), public domain reference construction.
class Rng {
public:
    using State = std::array<uint64_t, 4>;

    Rng() : Rng(0x853c49e6748fea9bULL) {}

    explicit Rng(uint64_t seed) {
        uint64_t sm = seed;
        for (auto& word : state_) word = splitmix64(sm);
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform integer in [0, bound). Fixed-point multiply keeps it branch-free
    // and identical everywhere.
    uint64_t next_below(uint64_t bound) {
        return static_cast<uint64_t>(
            (static_cast<__uint128_t>(next_u64()) * bound) >> 64);
    }

    int64_t next_index(int64_t bound) {
        return static_cast<int64_t>(next_below(static_cast<uint64_t>(bound)));
    }

    // Uniform double in [0, 1) with 53 random bits.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double next_uniform(double lo, double hi) {
        return lo + (hi - lo) * next_double();
    }

    // Box-Muller without spare caching; costs one extra draw but keeps the
    // state a plain 4-word array for checkpointing.
    double next_normal(double mean = 0.0, double stddev = 1.0) {
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        return mean + stddev * r * std::cos(theta);
    }

    const State& state() const { return state_; }
    void set_state(const State& s) { state_ = s; }

private:
    static uint64_t rotl(uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    State state_;
};

// Stable derivation of independent stream seeds from one master seed.
inline uint64_t derive_seed(uint64_t master, uint64_t stream) {
    uint64_t s = master ^ (0x6a09e667f3bcc909ULL + stream * 0x9e3779b97f4a7c15ULL);
    return splitmix64(s);
}

}  // namespace vssl
