#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace subag {

using Engine = std::mt19937_64;

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Seed of an independent stream identified by (base, tags...). Order matters.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) noexcept {
    std::uint64_t h = mix64(base);
    for (auto t : tags) h = mix64(h ^ mix64(t + 0x632be59bd9b4e019ULL));
    return h;
}

inline Engine make_engine(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
    return Engine(derive_seed(base, tags));
}

/// Uniform on the open interval (0, 1) from the top 53 bits of one draw.
inline double uniform_open(Engine& eng) {
    return (static_cast<double>(eng() >> 11) + 0.5) * 0x1.0p-53;
}

/// Standard normal draw; inverse-CDF on one uniform so streams are platform independent.
double standard_normal(Engine& eng);

}  // namespace subag
