#pragma once

// Counter-based seeding: every random draw in the library comes from a
// generator keyed by (seed, index, stream), so results do not depend on
// which worker runs which replicate.

#include <cstdint>
#include <random>

namespace medfuse {

enum class Stream : std::uint64_t {
    Internal = 1,
    External = 2,
    ExternalTheta = 3,
    Bootstrap = 4,
    MixtureNull = 5,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::mt19937_64 substream(std::uint64_t seed, std::uint64_t index, Stream stream) {
    std::uint64_t k = splitmix64(seed);
    k = splitmix64(k ^ splitmix64(index + 0x632be59bd9b4e019ULL));
    k = splitmix64(k ^ static_cast<std::uint64_t>(stream));
    return std::mt19937_64(k);
}

}  // namespace medfuse
