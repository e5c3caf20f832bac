#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "otupred/error.hpp"

namespace otupred {

// All stochastic code draws through this wrapper. std::mt19937_64's output
// sequence is fixed by the standard; the distribution transforms below are
// hand-rolled because std:: distributions are implementation-defined and the
// library guarantees bit-identical streams across platforms.
namespace detail {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

inline constexpr std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace detail

// SplitMix64-style key derivation. Independent streams for sub-tasks (per
// grid cell, per tree, per augmentation subset) are derived from a base seed
// plus integer tags, so results never depend on execution order.
inline constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
    return detail::mix64(seed + detail::kGolden * (tag + 1));
}

template <typename... Tags>
inline constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag,
                                           Tags... rest) {
    return derive_seed(derive_seed(seed, tag), rest...);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform on [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, n). Bitmask rejection keeps the draw unbiased
    // and consumes a deterministic function of the engine stream.
    std::uint64_t uniform_below(std::uint64_t n) {
        if (n == 0) throw UsageError("uniform_below: n must be positive");
        if (n == 1) return 0;
        const std::uint64_t mask = ~std::uint64_t{0} >> std::countl_zero(n - 1);
        for (;;) {
            const std::uint64_t x = engine_() & mask;
            if (x < n) return x;
        }
    }

    // Uniform integer in [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        if (lo > hi) throw UsageError("uniform_int: empty range");
        return lo + static_cast<std::int64_t>(
                        uniform_below(static_cast<std::uint64_t>(hi - lo) + 1));
    }

    // Standard normal via the Marsaglia polar method; the spare deviate is
    // cached, so draws come in deterministic pairs.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double m = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * m;
        has_spare_ = true;
        return u * m;
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Gamma(shape, scale) via Marsaglia-Tsang squeeze for shape >= 1 and the
    // power boost for shape < 1.
    double gamma(double shape, double scale) {
        if (!(shape > 0.0) || !(scale > 0.0))
            throw UsageError("gamma: shape and scale must be positive");
        if (shape < 1.0) {
            double u = uniform();
            if (u < 1e-300) u = 1e-300;
            return gamma(shape + 1.0, scale) * std::pow(u, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x, v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v * scale;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v)))
                return d * v * scale;
        }
    }

    // In-place Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // First k entries of a random permutation of 0..n-1, in draw order.
    std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k) {
        if (k > n) throw UsageError("sample_indices: k exceeds n");
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        for (std::size_t i = 0; i < k; ++i) {
            const std::size_t j =
                i + static_cast<std::size_t>(uniform_below(n - i));
            std::swap(idx[i], idx[j]);
        }
        idx.resize(k);
        return idx;
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace otupred
