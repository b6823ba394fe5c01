#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

#include "iapl/errors.hpp"

namespace iapl {

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Deterministic random source. All distributions are hand-rolled on top of
// mt19937_64 so that streams are reproducible for a given seed, independent
// of the standard library's distribution implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed), eng_(seed) {}

    uint64_t seed() const { return seed_; }
    uint64_t next_u64() { return eng_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive on both ends
    int uniform_int(int lo, int hi) {
        if (hi < lo) throw ArgumentError("uniform_int: empty range");
        uint64_t span = static_cast<uint64_t>(hi) - static_cast<uint64_t>(lo) + 1;
        return lo + static_cast<int>(next_u64() % span);
    }

    bool bernoulli(double p) { return uniform() < p; }

    double normal() {
        // Box-Muller; one fresh pair per call keeps the stream layout simple.
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // Independent child stream. Derivation uses the original seed, not the
    // evolving state, so the set of sibling streams drawn elsewhere does not
    // shift this one.
    Rng fork(uint64_t salt) const { return Rng(splitmix64(seed_ ^ splitmix64(salt))); }
    Rng fork(std::string_view name) const { return fork(fnv1a64(name)); }

private:
    uint64_t seed_;
    std::mt19937_64 eng_;
};

}  // namespace iapl
