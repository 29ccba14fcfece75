#pragma once

// Deterministic RNG used everywhere seeds appear. xoshiro256** with
// splitmix64 seeding; output sequences are fixed by the algorithm, not
// the standard library, so results are reproducible across platforms.

#include <array>
#include <cmath>
#include <cstdint>

namespace sfrf {

class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& w : state_) {
            // splitmix64
            x += 0x9e3779b97f4a7c15ULL;
            std::uint64_t z = x;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
            w = z ^ (z >> 31);
        }
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 53 bits of precision.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Box-Muller; the spare is cached so consecutive draws are independent.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform01();
        double u2 = uniform01();
        while (u1 <= 1e-300) u1 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

    // Derive an independent stream; used to pre-split per-sample streams.
    Rng split() { return Rng(next_u64()); }

    std::array<std::uint64_t, 6> serialize() const {
        return {state_[0], state_[1], state_[2], state_[3],
                has_spare_ ? 1ULL : 0ULL, bit_cast_u64(spare_)};
    }
    void deserialize(const std::array<std::uint64_t, 6>& s) {
        state_ = {s[0], s[1], s[2], s[3]};
        has_spare_ = s[4] != 0;
        spare_ = bit_cast_double(s[5]);
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    static std::uint64_t bit_cast_u64(double d) {
        std::uint64_t u;
        __builtin_memcpy(&u, &d, 8);
        return u;
    }
    static double bit_cast_double(std::uint64_t u) {
        double d;
        __builtin_memcpy(&d, &u, 8);
        return d;
    }

    std::array<std::uint64_t, 4> state_{};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace sfrf
