// threshold.hpp
//
// Otsu automatic thresholding and plain fixed thresholding of scalar maps.
//
// Otsu here is fully deterministic: values are quantized into 256 equal
// bins over the fixed range [0,1] and the between-class variance of every
// candidate boundary is compared in exact integer arithmetic, so the
// argmax (and its tie-handling: smallest threshold wins) cannot depend on
// floating-point rounding.  Labeling uses v >= threshold.

#pragma once

#include <cstdint>

#include "errors.hpp"
#include "raster.hpp"

namespace usta {

namespace detail {

// 192-bit product of a 128-bit and a 64-bit unsigned integer, for exact
// cross-multiplied comparison of the variance fractions A^2 / B.
struct U192 {
    std::uint64_t hi, mid, lo;
};

inline U192 mul_u128_u64(unsigned __int128 a, std::uint64_t b) {
    const std::uint64_t a_hi = static_cast<std::uint64_t>(a >> 64);
    const std::uint64_t a_lo = static_cast<std::uint64_t>(a);
    const unsigned __int128 p_lo = static_cast<unsigned __int128>(a_lo) * b;
    const unsigned __int128 p_hi = static_cast<unsigned __int128>(a_hi) * b +
                                   static_cast<std::uint64_t>(p_lo >> 64);
    return {static_cast<std::uint64_t>(p_hi >> 64),
            static_cast<std::uint64_t>(p_hi),
            static_cast<std::uint64_t>(p_lo)};
}

inline int cmp_u192(const U192& a, const U192& b) {
    if (a.hi != b.hi) return a.hi < b.hi ? -1 : 1;
    if (a.mid != b.mid) return a.mid < b.mid ? -1 : 1;
    if (a.lo != b.lo) return a.lo < b.lo ? -1 : 1;
    return 0;
}

inline std::size_t bin_of(double v) {
    auto b = static_cast<std::size_t>(v * 256.0);
    return b > 255 ? 255 : b;
}

} // namespace detail

struct OtsuResult {
    ChangeMap map;
    double threshold; // in [0,1]; 1.0 sentinel when the input is constant
};

inline ChangeMap fixed_threshold(const ScalarMap& di, double t) {
    if (!(t >= 0.0 && t <= 1.0))
        throw ArgumentError("fixed_threshold: t outside [0,1]");
    ChangeMap map(di.height, di.width);
    for (std::size_t i = 0; i < di.data.size(); ++i)
        map.data[i] = di.data[i] >= t ? 1 : 0;
    return map;
}

inline OtsuResult otsu(const ScalarMap& di) {
    const std::size_t n = di.data.size();
    if (n == 0) throw ArgumentError("otsu: empty map");
    // Exactness bound: |sum0*cum1 - sum1*cum0| <= 255*N^2 must fit in 63 bits.
    if (n > (std::size_t{1} << 26))
        throw ArgumentError("otsu: map too large for exact arithmetic");

    std::uint64_t hist[256] = {0};
    for (double v : di.data) ++hist[detail::bin_of(v)];

    std::uint64_t total_cnt = n, total_sum = 0;
    for (std::size_t b = 0; b < 256; ++b) total_sum += b * hist[b];

    // Between-class variance at boundary k is proportional to A^2 / B with
    //   A = sum0*cum1 - sum1*cum0,  B = cum0*cum1
    // where (cum0,sum0) cover bins [0,k) and (cum1,sum1) bins [k,255].
    int best_k = -1;
    unsigned __int128 best_a2 = 0;
    std::uint64_t best_b = 1;
    std::uint64_t cum0 = 0, sum0 = 0;
    for (int k = 1; k <= 255; ++k) {
        cum0 += hist[k - 1];
        sum0 += static_cast<std::uint64_t>(k - 1) * hist[k - 1];
        const std::uint64_t cum1 = total_cnt - cum0;
        const std::uint64_t sum1 = total_sum - sum0;
        if (cum0 == 0 || cum1 == 0) continue;
        const unsigned __int128 lhs = static_cast<unsigned __int128>(sum0) * cum1;
        const unsigned __int128 rhs = static_cast<unsigned __int128>(sum1) * cum0;
        const unsigned __int128 a = lhs > rhs ? lhs - rhs : rhs - lhs;
        const unsigned __int128 a2 =
            a * a; // a <= 255*N^2 < 2^63, so a^2 fits in 126 bits
        const std::uint64_t b = cum0 * cum1;
        if (best_k < 0 ||
            detail::cmp_u192(detail::mul_u128_u64(a2, best_b),
                             detail::mul_u128_u64(best_a2, b)) > 0) {
            best_k = k;
            best_a2 = a2;
            best_b = b;
        }
    }

    if (best_k < 0) {
        // every value fell into one bin: report "no change" with a sentinel
        OtsuResult r{ChangeMap(di.height, di.width), 1.0};
        return r;
    }
    const double t = static_cast<double>(best_k) / 256.0;
    return OtsuResult{fixed_threshold(di, t), t};
}

} // namespace usta
