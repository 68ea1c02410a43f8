#pragma once

#include <cstdint>

namespace atq {

// All randomness in the toolkit flows from one documented generator so runs
// are reproducible bit-for-bit: xoshiro256** seeded via splitmix64
// (see README "Determinism and randomness").

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

class Xoshiro256 {
public:
    explicit Xoshiro256(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& word : s_) {
            word = splitmix64(sm);
        }
    }

    std::uint64_t next() {
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

    // Uniform in [0, 1) with 53 random bits.
    double uniform01() {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    // Uniform in [0, bound). Plain modulo; the bias is irrelevant at the
    // bounds used here and keeps the sequence easy to reproduce elsewhere.
    std::uint64_t bounded(std::uint64_t bound) {
        return next() % bound;
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t s_[4];
};

// Stable per-(group, block) seed derivation for codebook construction.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t group, std::uint64_t block) {
    std::uint64_t sm = base ^ (0x9E3779B97F4A7C15ULL * (group + 1));
    std::uint64_t h = splitmix64(sm);
    sm = h ^ (0xBF58476D1CE4E5B9ULL * (block + 1));
    return splitmix64(sm);
}

} // namespace atq
