#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace epm {

// std::uniform_*_distribution output differs between standard libraries;
// everything seeded in this project goes through these helpers so results
// are identical on every toolchain.
using rng_t = std::mt19937_64;

inline std::size_t uniform_index(rng_t& rng, std::size_t n)
{
    const std::uint64_t bound = n;
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound);
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return static_cast<std::size_t>(x % bound);
}

inline double uniform01(rng_t& rng)
{
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_real(rng_t& rng, double lo, double hi)
{
    return lo + (hi - lo) * uniform01(rng);
}

template <typename T>
void shuffle(std::vector<T>& v, rng_t& rng)
{
    for (std::size_t i = v.size(); i > 1; --i) {
        std::swap(v[i - 1], v[uniform_index(rng, i)]);
    }
}

template <typename T>
const T& pick(const std::vector<T>& v, rng_t& rng)
{
    return v[uniform_index(rng, v.size())];
}

}  // namespace epm
