#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace afr {

/**
 * Deterministic pseudo-random generator.
 *
 * The core stream is SplitMix64 (Steele, Lea & Flood 2014): a counter with
 * increment 0x9e3779b97f4a7c15 pushed through a fixed 64-bit mix. The
 * algorithm is pinned here on purpose -- the platform default engines are
 * implementation-defined, and identical seeds must reproduce identical
 * streams on every machine. Gaussian draws use the Marsaglia polar method
 * on top of the uniform stream.
 */
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform double in [0, 1), 53 bits of precision.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n), rejection sampled so there is no modulo bias.
    std::uint64_t below(std::uint64_t n) {
        std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // Standard normal via the polar method; consumes draws in pairs and
    // caches the second value.
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        double m = std::sqrt(-2.0 * std::log(s) / s);
        cached_ = v * m;
        has_cached_ = true;
        return u * m;
    }

    // Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& values) {
        for (std::size_t i = values.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(values[i - 1], values[j]);
        }
    }

private:
    std::uint64_t state_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

// Derives an independent stream for a named sub-purpose of a run seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t purpose) {
    Rng rng(seed ^ (purpose * 0x9e3779b97f4a7c15ULL));
    return rng.next_u64();
}

}  // namespace afr
