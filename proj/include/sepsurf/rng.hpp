#pragma once

#include <cstdint>

namespace sepsurf::rng {

// Stateless counter-based generator: every variate is a pure function of
// (seed, stream, counter), so parallel consumers agree regardless of scheduling.

constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

inline std::uint64_t mix64(std::uint64_t x) {
    x += kGamma;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline std::uint64_t key(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
    std::uint64_t h = mix64(seed);
    h = mix64(h ^ stream);
    h = mix64(h ^ counter);
    return h;
}

// Uniform on (0,1), symmetric around 1/2, never hits the endpoints.
inline double uniform01(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
    const std::uint64_t bits = key(seed, stream, counter) >> 11; // 53 bits
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

// Standard normal quantile (Wichura's PPND16 rational approximation).
double normal_quantile(double p);

inline double normal(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
    return normal_quantile(uniform01(seed, stream, counter));
}

// Fixed stream labels so independent purposes never share counters.
namespace stream {
constexpr std::uint64_t surface_values = 0x5155A1;
constexpr std::uint64_t noise = 0x5155A2;
constexpr std::uint64_t subsample = 0x5155A3;
constexpr std::uint64_t folds = 0x5155A4;
constexpr std::uint64_t band_draws = 0x5155A5;
constexpr std::uint64_t generic = 0x5155A6;
} // namespace stream

} // namespace sepsurf::rng
