#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace sslpdl {

// splitmix64 finalizer; used to turn (seed, counter...) keys into engine seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t hash_key(std::initializer_list<std::uint64_t> parts) noexcept {
    std::uint64_t h = 0x6a09e667f3bcc909ULL;
    for (auto p : parts) h = mix64(h ^ mix64(p));
    return h;
}

constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Stream identifiers keep independent draws for the same sample apart.
enum class Stream : std::uint64_t {
    truth = 1,
    forecast_noise,
    covariates,
    mask,
    init,
    shuffle,
    sampling,
    augment,
};

// Engine seeded from a counter key; no generator state is shared between calls.
inline std::mt19937_64 keyed_engine(std::uint64_t seed, std::uint64_t index, Stream stream,
                                    std::uint64_t extra = 0) {
    return std::mt19937_64(hash_key({seed, index, static_cast<std::uint64_t>(stream), extra}));
}

} // namespace sslpdl
