#pragma once

#include <cstdint>
#include <cmath>
#include <string_view>
#include <vector>

namespace statalign {

// All randomness in the project flows through this header so that runs are
// reproducible bit-for-bit across platforms. std::uniform_*_distribution is
// implementation-defined and must not be used anywhere.

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

// Derives an independent sub-seed from a master seed and a stream name,
// e.g. derive_seed(seed, "train:vgg_small"). Documented in the README.
inline uint64_t derive_seed(uint64_t master, std::string_view stream) {
    uint64_t state = master ^ fnv1a64(stream);
    uint64_t a = splitmix64(state);
    uint64_t b = splitmix64(state);
    return a ^ (b << 1);
}

inline uint64_t derive_seed(uint64_t master, std::string_view stream, uint64_t index) {
    uint64_t state = derive_seed(master, stream) ^ (0x9e3779b97f4a7c15ull * (index + 1));
    return splitmix64(state);
}

// splitmix64-backed generator with explicitly specified conversions.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() { return splitmix64(state_); }

    // Unbiased bounded integer in [0, bound) via rejection sampling.
    uint64_t next_below(uint64_t bound) {
        if (bound <= 1) return 0;
        uint64_t threshold = (~bound + 1) % bound;  // 2^64 mod bound
        for (;;) {
            uint64_t r = next_u64();
            if (r >= threshold) return r % bound;
        }
    }

    // Uniform in [0, 1) with 53 random bits.
    double next_real() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double next_real(double lo, double hi) { return lo + (hi - lo) * next_real(); }

    // Standard normal via Box-Muller (one value per call, cached pair).
    double next_normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = next_real();
        double u2 = next_real();
        if (u1 < 1e-300) u1 = 1e-300;
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586 * u2;
        cached_ = r * std::sin(theta);
        have_cached_ = true;
        return r * std::cos(theta);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t state_;
    double cached_ = 0.0;
    bool have_cached_ = false;
};

}  // namespace statalign
