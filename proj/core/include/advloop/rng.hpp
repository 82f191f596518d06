#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace advloop::rng {

/// FNV-1a over bytes; used for seed derivation and file checksums.
inline std::uint64_t fnv1a64(std::string_view bytes,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (const char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Independent engine for (seed, purpose). Streams with different tags are
/// decorrelated, so subsystems can draw without sharing cursor state.
inline std::mt19937_64 make_stream(std::uint64_t seed, std::string_view tag) {
    return std::mt19937_64{mix(seed ^ fnv1a64(tag))};
}

/// Uniform double in [0, 1) from the top 53 bits of one engine draw.
inline double uniform(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_in(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform(rng);
}

/// Standard normal via Box-Muller on explicit uniforms. Hand-rolled instead
/// of std::normal_distribution so draws are reproducible across standard
/// library implementations and carry no hidden cache between calls.
inline double gaussian(std::mt19937_64& rng) {
    double u1 = uniform(rng);
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double u2 = uniform(rng);
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
}

/// Index in [0, n) with rejection sampling, bias-free.
inline std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
    if (n == 0) return 0;
    const std::uint64_t limit =
        std::numeric_limits<std::uint64_t>::max() / n * n;
    std::uint64_t v = rng();
    while (v >= limit) v = rng();
    return static_cast<std::size_t>(v % n);
}

/// Engine state as whitespace-separated decimal words (the standard stream
/// format), round-trippable bit-exactly.
inline std::string save_state(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

inline void load_state(std::mt19937_64& rng, const std::string& text) {
    std::istringstream is(text);
    is >> rng;
    if (is.fail())
        throw std::invalid_argument("rng::load_state: malformed engine state");
}

} // namespace advloop::rng
