#pragma once

// Deterministic RNG. All randomness in the toolkit flows from explicit
// 64-bit seeds; stages derive their own seed with derive_seed(master, stage,
// counter) so re-running any stage reproduces its draws exactly regardless
// of platform or thread count.

#include <cmath>
#include <cstdint>
#include <string_view>

namespace darkflash {

namespace detail {
inline uint64_t splitmix64(uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}
}  // namespace detail

inline uint64_t derive_seed(uint64_t master, std::string_view stage, uint64_t counter = 0) {
    uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a over the stage name
    for (char c : stage) {
        h ^= static_cast<uint8_t>(c);
        h *= 0x100000001b3ull;
    }
    uint64_t state = master ^ h;
    state ^= 0x632be59bd9b4e019ull * (counter + 1);
    uint64_t out = detail::splitmix64(state);
    out = detail::splitmix64(state) ^ out;
    return out;
}

class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t s = seed;
        state_[0] = detail::splitmix64(s);
        state_[1] = detail::splitmix64(s);
        has_spare_ = false;
    }

    uint64_t next_u64() {  // xoroshiro128++
        const uint64_t s0 = state_[0];
        uint64_t s1 = state_[1];
        const uint64_t result = rotl(s0 + s1, 17) + s0;
        s1 ^= s0;
        state_[0] = rotl(s0, 49) ^ s1 ^ (s1 << 21);
        state_[1] = rotl(s1, 28);
        return result;
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n) without modulo bias.
    uint64_t uniform_index(uint64_t n) {
        const uint64_t limit = ~uint64_t{0} - (~uint64_t{0} % n);
        uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return v % n;
    }

    double gaussian() {  // Box-Muller, pairwise
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    uint64_t state_[2];
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace darkflash
