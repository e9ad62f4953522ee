#pragma once

// Seeded randomness helpers. std::mt19937_64 itself is fully specified by the
// standard, but the distribution classes are not; the transforms here are
// spelled out so identical seeds give identical streams on every platform.

#include <cmath>
#include <cstdint>
#include <random>

#include "softpose/common.hpp"

namespace softpose {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derives an independent stream seed from a base seed and stream indices
/// (epoch number, sample index, ...).
inline uint64_t derive_seed(uint64_t base, uint64_t a, uint64_t b = 0) {
    return splitmix64(splitmix64(base ^ (a * 0x9e3779b97f4a7c15ULL)) ^ b);
}

class Rng {
  public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    /// Uniform in [0, 1).
    real uniform() {
        return static_cast<real>((gen_() >> 11) * (1.0 / 9007199254740992.0));
    }

    real uniform(real lo, real hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    int64_t below(int64_t n) {
        // Modulo bias is irrelevant at the sizes used here (n << 2^64).
        return static_cast<int64_t>(gen_() % static_cast<uint64_t>(n));
    }

    /// Standard normal via Box-Muller.
    real normal() {
        real u1 = uniform();
        real u2 = uniform();
        if (u1 < real(1e-300)) u1 = real(1e-300);
        return std::sqrt(real(-2) * std::log(u1)) *
               std::cos(real(2) * real(3.14159265358979323846) * u2);
    }

  private:
    std::mt19937_64 gen_;
};

/// In-place Fisher-Yates shuffle with a spelled-out draw order.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (size_t i = v.size(); i > 1; --i) {
        size_t j = static_cast<size_t>(rng.below(static_cast<int64_t>(i)));
        std::swap(v[i - 1], v[j]);
    }
}

} // namespace softpose
