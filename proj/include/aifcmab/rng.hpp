#pragma once

#include "aifcmab/common.hpp"

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace aifcmab {

// SplitMix64 finalizer. All randomness in the library flows through this
// so that every draw is a pure function of (seed, key path, draw index),
// independent of platform and standard-library version.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Folds key parts into a stream seed. Distinct part sequences give
// decorrelated streams (used for common-random-numbers keying).
inline std::uint64_t derive_key(std::uint64_t seed, std::initializer_list<std::uint64_t> parts) {
    std::uint64_t h = mix64(seed ^ 0x51f8a7c3b9d2e604ull);
    for (std::uint64_t p : parts)
        h = mix64(h ^ mix64(p + 0x632be59bd9b4e019ull));
    return h;
}

class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Box-Muller; consumes exactly two uniforms per call.
    double normal() {
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log1p(-u1));  // log(1-u1), u1 < 1
        return r * std::cos(2.0 * std::numbers::pi * u2);
    }

    // Uniform integer in [0, n).
    int uniform_int(int n) {
        require(n > 0, "uniform_int: n must be positive");
        return static_cast<int>(uniform() * static_cast<double>(n));
    }

    // Inverse-CDF draw over a probability vector in its given order.
    int categorical(const VectorXd& probs) {
        require(probs.size() > 0, "categorical: empty distribution");
        const double u = uniform();
        double cum = 0.0;
        for (Eigen::Index i = 0; i < probs.size(); ++i) {
            cum += probs[i];
            if (u < cum)
                return static_cast<int>(i);
        }
        return static_cast<int>(probs.size() - 1);  // guards cum < 1 rounding
    }

private:
    std::uint64_t state_;
};

inline RngStream keyed_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> parts) {
    return RngStream(derive_key(seed, parts));
}

}  // namespace aifcmab
