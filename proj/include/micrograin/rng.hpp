// Deterministic random number utilities.
//
// Two flavors are used throughout:
//  * Rng        — a sequential splitmix stream with an explicitly coded
//                 Box-Muller normal and Fisher-Yates shuffle, so results do
//                 not depend on the standard library's distribution
//                 implementations.
//  * hash draws — stateless counter-based draws keyed by (seed, step, cell),
//                 used where the draw order must not matter.
#pragma once

#include <cstdint>
#include <cmath>
#include <vector>

namespace micrograin {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Stateless hash of up to three counters onto a 64-bit word.
inline std::uint64_t hash_counters(std::uint64_t seed, std::uint64_t a,
                                   std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ a);
    h = splitmix64(h ^ b);
    h = splitmix64(h ^ c);
    return h;
}

// Top 53 bits -> [0, 1).
inline double unit_double(std::uint64_t bits) {
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

// Sequential generator: a splitmix counter stream, which is plenty for
// simulation seeding and minibatch shuffles while staying trivially
// serializable. Normals via Box-Muller with one cached value.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(splitmix64(seed)) {
        for (int i = 0; i < 4; ++i) state_ = splitmix64(state_);
    }

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t x = state_;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
        return x ^ (x >> 31);
    }

    double uniform() { return unit_double(next_u64()); }

    // Uniform integer in [0, n), n > 0. Modulo bias is < 2^-53 for any n
    // that fits in memory; acceptable for shuffles and index draws.
    std::uint64_t uniform_index(std::uint64_t n) {
        return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
    }

    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        // Box-Muller; u1 in (0,1].
        double u1 = 1.0 - uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return r * std::cos(a);
    }

    float normal_f() { return static_cast<float>(normal()); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
    bool has_cached_ = false;
    double cached_ = 0.0;
};

} // namespace micrograin
