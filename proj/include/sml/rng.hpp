#pragma once

#include <cstdint>
#include <random>

namespace sml {

/// splitmix64 mixing step (Steele, Lea, Flood).
inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

/// Counter-based seed split: (master, stream, index) -> independent seed.
/// Lets any realization be reproduced in isolation without generating its
/// predecessors.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index = 0) {
    std::uint64_t s = master;
    std::uint64_t z = splitmix64(s);
    s = z ^ (stream * 0xd6e8feb86659fd93ull);
    z = splitmix64(s);
    s = z ^ (index * 0xa3b195354a39b70dull);
    return splitmix64(s);
}

/// Stream of i.i.d. standard normal samples.
class GaussianStream {
public:
    explicit GaussianStream(std::uint64_t seed) : eng_(seed) {}

    double next() { return dist_(eng_); }

private:
    std::mt19937_64 eng_;
    std::normal_distribution<double> dist_{0.0, 1.0};
};

}  // namespace sml
