#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace beamrl {

inline constexpr double kPi = std::numbers::pi;
inline constexpr const char* kVersion = "0.1.0";

/// Wraps an angle into the half-open interval (-pi, pi].
inline double wrap_angle(double x) {
    double y = std::fmod(x + kPi, 2.0 * kPi);
    if (y <= 0.0) y += 2.0 * kPi;
    return y - kPi;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Deterministic per-subsystem seed derivation from a master seed and a tag
/// such as "scenario" or "agent.3".
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view tag) {
    return splitmix64(master ^ fnv1a(tag));
}

inline std::mt19937_64 make_rng(std::uint64_t seed) {
    return std::mt19937_64(seed);
}

}  // namespace beamrl
