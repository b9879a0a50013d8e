#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace protomargin {

// All randomness in the engine funnels through one base seed; submodule streams
// are derived with labeled FNV-1a hashing so adding a consumer never shifts the
// draws of another.
inline uint64_t derive_seed(uint64_t base, std::string_view label) {
    uint64_t h = 1469598103934665603ull;
    auto mix = [&h](uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xffu;
            h *= 1099511628211ull;
        }
    };
    mix(base);
    for (char c : label) {
        h ^= static_cast<uint8_t>(c);
        h *= 1099511628211ull;
    }
    mix(h);  // final avalanche pass
    return h;
}

inline uint64_t derive_seed(uint64_t base, std::string_view label, uint64_t index) {
    return derive_seed(derive_seed(base, label) ^ (index * 0x9e3779b97f4a7c15ull + 1), label);
}

/// mt19937_64 with hand-rolled distributions. The engine sequence is fixed by
/// the standard and the distributions below avoid libstdc++/libc++ divergence,
/// so identical seeds give identical draws everywhere.
class Rng {
  public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Modulo bias is negligible for the small n used here.
    int64_t uniform_int(int64_t n) { return static_cast<int64_t>(eng_() % static_cast<uint64_t>(n)); }

    /// Standard normal via Box-Muller; the second value of the pair is discarded.
    double gaussian() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    /// Fisher-Yates shuffle (std::shuffle is implementation-defined).
    template <typename V>
    void shuffle(V& v) {
        for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
            int64_t j = uniform_int(i + 1);
            std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
        }
    }

    /// k distinct indices from [0, n), order random.
    std::vector<int64_t> sample_without_replacement(int64_t n, int64_t k) {
        std::vector<int64_t> idx(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
        // partial Fisher-Yates: first k positions end up sampled
        for (int64_t i = 0; i < k; ++i) {
            int64_t j = i + uniform_int(n - i);
            std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
        }
        idx.resize(static_cast<size_t>(k));
        return idx;
    }

  private:
    std::mt19937_64 eng_;
};

}  // namespace protomargin
