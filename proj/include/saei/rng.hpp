#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>

namespace saei {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Stream derived from a tuple of identifiers (e.g. seed, step, sample, rollout)
// so that every consumer gets an independent, schedule-free stream.
inline Rng make_rng(std::initializer_list<std::uint64_t> key) {
    std::uint64_t h = 0x5ae1'5ae1'5ae1'5ae1ULL;
    for (std::uint64_t k : key) h = splitmix64(h ^ splitmix64(k));
    return Rng(h);
}

// Uniform in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform in {0, ..., n - 1}; n > 0.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n));
}

// Inverse-CDF draw. Zero-probability entries are never selected.
inline std::size_t sample_categorical(std::span<const double> probs, Rng& rng) {
    const double u = uniform01(rng);
    double cum = 0.0;
    std::size_t last_nonzero = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (probs[i] <= 0.0) continue;
        last_nonzero = i;
        cum += probs[i];
        if (u < cum) return i;
    }
    return last_nonzero;
}

}  // namespace saei
