#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace lmforge {

// xoshiro256** seeded through splitmix64. The draw contracts below are part
// of the artifact's reproducibility surface: every sampled artifact (corpus
// samples, weight inits, dropout masks, generation) is a pure function of the
// seed and the documented draw sequence, on every platform.
//
//   next()        -> raw 64-bit draw
//   below(n)      -> one next() mapped by rejection: draw until
//                    x < 2^64 - 2^64 % n, return x % n
//   uniform()     -> (next() >> 11) * 2^-53, in [0, 1)
//   gaussian()    -> Box-Muller on two uniform() draws (no caching):
//                    sqrt(-2 ln(1-u1)) * cos(2*pi*u2)
class Rng {
public:
    Rng() : Rng(0) {}

    explicit Rng(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& word : state_) word = splitmix64(x);
    }

    std::uint64_t next() {
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

    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t bound = n == 0 ? 0 : ~std::uint64_t{0} - (~std::uint64_t{0} % n + 1) % n;
        std::uint64_t x = next();
        while (x > bound) x = next();
        return x % n;
    }

    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double gaussian() {
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log1p(-u1));
        return r * std::cos(2.0 * 3.141592653589793238462643383279502884 * u2);
    }

    std::array<std::uint64_t, 4> state() const { return state_; }
    void set_state(const std::array<std::uint64_t, 4>& s) { state_ = s; }

private:
    static std::uint64_t splitmix64(std::uint64_t& x) {
        std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::array<std::uint64_t, 4> state_{};
};

}  // namespace lmforge
