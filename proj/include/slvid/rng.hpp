#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace slv {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t stream_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) noexcept {
    std::uint64_t h = mix64(seed);
    for (std::uint64_t k : keys) {
        h = mix64(h ^ mix64(k + 0x632be59bd9b4e019ULL));
    }
    return h;
}

inline Rng make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
    return Rng(stream_seed(seed, keys));
}

} // namespace slv
