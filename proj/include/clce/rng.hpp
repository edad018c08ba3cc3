#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace clce {

// Derives an independent seed from (master, stream) with a SplitMix64 step.
// Every component that needs randomness gets its own derived stream, so
// concurrent execution cannot change what any stream produces.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t s1, std::uint64_t s2) {
    return derive_seed(derive_seed(master, s1), s2);
}

// mt19937_64 with explicit uniform/gaussian mappings. The engine is specified
// bit-exactly by the standard; the mappings below avoid std distributions,
// whose output is implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // [0, 1) with 53 random bits
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // unbiased draw from [0, n), n >= 1
    std::size_t uniform_index(std::size_t n) {
        const std::uint64_t span = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        std::uint64_t r;
        do {
            r = engine_();
        } while (r >= limit);
        return static_cast<std::size_t>(r % span);
    }

    // standard normal, Box-Muller with cached spare
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        have_spare_ = true;
        return radius * std::cos(angle);
    }

    // Fisher-Yates; after the call the first k entries are a uniform
    // k-subset of v in random order
    template <typename T>
    void partial_shuffle(std::vector<T>& v, std::size_t k) {
        const std::size_t n = v.size();
        if (n == 0) return;
        const std::size_t steps = std::min(k, n - 1);
        for (std::size_t i = 0; i < steps; ++i) {
            const std::size_t j = i + uniform_index(n - i);
            std::swap(v[i], v[j]);
        }
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        partial_shuffle(v, v.size());
    }

private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace clce
