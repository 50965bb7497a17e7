#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace crlab {

// Deterministic randomness. The engine is std::mt19937_64 (bit-exact across
// platforms by the standard); the distributions are hand-rolled because the
// standard library's distribution objects are implementation-defined and
// would break cross-toolchain reproducibility of checkpoints and curves.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform01() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n) {
        // Rejection sampling keeps the draw unbiased.
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = engine_();
        while (x >= limit) {
            x = engine_();
        }
        return x % n;
    }

    // Standard normal via Box-Muller (explicit formula, no cached spare).
    double gaussian() {
        double u = uniform01();
        while (u <= 0.0) {
            u = uniform01();
        }
        const double r = std::sqrt(-2.0 * std::log(u));
        const double theta = 6.283185307179586477 * uniform01();
        return r * std::cos(theta);
    }

    double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) {
            return;
        }
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i + 1));
            std::swap(v[i], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

// Derives an independent child seed from a parent seed plus a purpose tag and
// index, so every pipeline stage draws from its own stream. splitmix64-style
// mixing; stable by construction.
inline std::uint64_t derive_seed(std::uint64_t parent, std::string_view tag, std::uint64_t index = 0) {
    std::uint64_t h = parent ^ 0x9e3779b97f4a7c15ull;
    auto mix = [&h](std::uint64_t v) {
        h += v + 0x9e3779b97f4a7c15ull;
        std::uint64_t z = h;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        h = z ^ (z >> 31);
    };
    for (char c : tag) {
        mix(static_cast<std::uint64_t>(static_cast<unsigned char>(c)));
    }
    mix(index);
    return h;
}

}  // namespace crlab
