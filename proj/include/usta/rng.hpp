// rng.hpp
//
// Deterministic random number generation.  Every stochastic step in the
// library draws from this wrapper so that a run is reproducible from a
// single seed across platforms.  The raw engine is std::mt19937_64, whose
// output sequence is fixed by the standard; the distributions below are
// implemented by hand because the std::*_distribution classes are allowed
// to differ between standard library vendors.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "errors.hpp"

namespace usta {

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 bits of resolution.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        if (!(lo <= hi)) throw ArgumentError("uniform: lo > hi");
        return lo + (hi - lo) * uniform();
    }

    // Uniform integer in [lo, hi] via rejection sampling (unbiased).
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        if (lo > hi) throw ArgumentError("uniform_int: lo > hi");
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        if (span == 0) return static_cast<std::int64_t>(engine_()); // full range
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        std::uint64_t v;
        do { v = engine_(); } while (v >= limit);
        return lo + static_cast<std::int64_t>(v % span);
    }

    // Standard normal via Box-Muller; caches the second variate.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do { u1 = uniform(); } while (u1 <= 0.0);
        u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) {
        if (stddev < 0.0) throw ArgumentError("normal: negative stddev");
        return mean + stddev * normal();
    }

    // Fisher-Yates shuffle, identical order on every platform.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            const auto j = static_cast<std::size_t>(
                uniform_int(0, static_cast<std::int64_t>(i)));
            std::swap(v[i], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace usta
