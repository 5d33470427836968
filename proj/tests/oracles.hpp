// oracles.hpp
//
// Independent reference implementations used only by the test suite.
// Each oracle is written from the mathematical definition with a different
// algorithmic route than the library (plain nested loops, exhaustive
// search, cyclic Jacobi, finite differences) so agreement is meaningful.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "usta/raster.hpp"
#include "usta/tensor.hpp"

namespace oracle {

// Exhaustive Otsu: try all 255 boundaries, compare between-class variance
// fractions A^2/B exactly via 128-bit cross multiplication (test maps are
// small enough that A^2 * B fits), prefer the smallest threshold on ties.
struct OtsuOracleResult {
    int k;            // chosen boundary, -1 when all bins coincide
    double threshold; // k/256, or the 1.0 sentinel
};

inline OtsuOracleResult otsu_exhaustive(const usta::ScalarMap& di) {
    std::uint64_t hist[256] = {0};
    for (double v : di.data) {
        auto b = static_cast<std::size_t>(v * 256.0);
        if (b > 255) b = 255;
        ++hist[b];
    }
    std::uint64_t total_cnt = di.data.size(), total_sum = 0;
    for (std::size_t b = 0; b < 256; ++b) total_sum += b * hist[b];

    int best = -1;
    unsigned __int128 best_a2 = 0;
    std::uint64_t best_b = 1;
    for (int k = 1; k <= 255; ++k) {
        std::uint64_t cum0 = 0, sum0 = 0;
        for (int b = 0; b < k; ++b) {
            cum0 += hist[b];
            sum0 += static_cast<std::uint64_t>(b) * hist[b];
        }
        const std::uint64_t cum1 = total_cnt - cum0;
        const std::uint64_t sum1 = total_sum - sum0;
        if (cum0 == 0 || cum1 == 0) continue;
        const long long diff = static_cast<long long>(sum0 * cum1) -
                               static_cast<long long>(sum1 * cum0);
        const auto a = static_cast<unsigned __int128>(diff < 0 ? -diff : diff);
        const unsigned __int128 a2 = a * a;
        const std::uint64_t b = cum0 * cum1;
        if (best < 0 || a2 * best_b > best_a2 * b) {
            best = k;
            best_a2 = a2;
            best_b = b;
        }
    }
    if (best < 0) return {-1, 1.0};
    return {best, static_cast<double>(best) / 256.0};
}

// Brute-force confidence filter: literal window scan per pixel.
inline usta::ScalarMap filter_brute(const usta::ChangeMap& cm, std::size_t w) {
    usta::ScalarMap pc(cm.height, cm.width);
    const long r = static_cast<long>((w - 1) / 2);
    const long h = static_cast<long>(cm.height), wd = static_cast<long>(cm.width);
    for (long i = 0; i < h; ++i)
        for (long j = 0; j < wd; ++j) {
            if (i - r < 0 || j - r < 0 || i + r >= h || j + r >= wd) continue;
            long cnt = 0;
            for (long di = -r; di <= r; ++di)
                for (long dj = -r; dj <= r; ++dj) {
                    const bool a = cm.data[static_cast<std::size_t>((i + di) * wd +
                                                                    (j + dj))] != 0;
                    const bool b = cm.data[static_cast<std::size_t>(i * wd + j)] != 0;
                    if (a == b) ++cnt; // XNOR
                }
            pc.data[static_cast<std::size_t>(i * wd + j)] =
                static_cast<double>(cnt) / static_cast<double>(w * w);
        }
    return pc;
}

// Cyclic Jacobi eigensolver for small symmetric matrices; eigenpairs
// returned in descending eigenvalue order (column j of vecs).
struct JacobiEigen {
    std::vector<double> values;
    std::vector<std::vector<double>> vectors; // vectors[j] is eigenvector j
};

inline JacobiEigen jacobi_eigen(std::vector<std::vector<double>> a) {
    const std::size_t n = a.size();
    std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
        if (off < 1e-28) break;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                if (a[p][q] == 0.0) continue;
                const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a[k][p], akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a[p][k], aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v[k][p], vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
    }

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (a[order[j]][order[j]] > a[order[i]][order[i]])
                std::swap(order[i], order[j]);

    JacobiEigen out;
    out.values.resize(n);
    out.vectors.assign(n, std::vector<double>(n, 0.0));
    for (std::size_t j = 0; j < n; ++j) {
        out.values[j] = a[order[j]][order[j]];
        for (std::size_t i = 0; i < n; ++i) out.vectors[j][i] = v[i][order[j]];
    }
    return out;
}

// Direct 6-nested-loop cross-correlation with zero padding, stride 1.
inline std::vector<double> conv2d_loops(const std::vector<double>& x, long B, long IC,
                                        long H, long W, const std::vector<double>& k,
                                        long OC, long K, const std::vector<double>& bias,
                                        long P) {
    const long OH = H + 2 * P - K + 1, OW = W + 2 * P - K + 1;
    std::vector<double> out(static_cast<std::size_t>(B * OC * OH * OW), 0.0);
    for (long b = 0; b < B; ++b)
        for (long oc = 0; oc < OC; ++oc)
            for (long oy = 0; oy < OH; ++oy)
                for (long ox = 0; ox < OW; ++ox) {
                    double s = bias[static_cast<std::size_t>(oc)];
                    for (long ic = 0; ic < IC; ++ic)
                        for (long ky = 0; ky < K; ++ky)
                            for (long kx = 0; kx < K; ++kx) {
                                const long iy = oy + ky - P, ix = ox + kx - P;
                                if (iy < 0 || ix < 0 || iy >= H || ix >= W) continue;
                                s += x[static_cast<std::size_t>(
                                         ((b * IC + ic) * H + iy) * W + ix)] *
                                     k[static_cast<std::size_t>(
                                         ((oc * IC + ic) * K + ky) * K + kx)];
                            }
                    out[static_cast<std::size_t>(((b * OC + oc) * OH + oy) * OW + ox)] = s;
                }
    return out;
}

inline std::vector<double> maxpool2_loops(const std::vector<double>& x, long B, long C,
                                          long H, long W) {
    std::vector<double> out(static_cast<std::size_t>(B * C * (H / 2) * (W / 2)));
    std::size_t oi = 0;
    for (long bc = 0; bc < B * C; ++bc)
        for (long oy = 0; oy < H / 2; ++oy)
            for (long ox = 0; ox < W / 2; ++ox) {
                double best = -1e300;
                for (long dy = 0; dy < 2; ++dy)
                    for (long dx = 0; dx < 2; ++dx)
                        best = std::max(best,
                                        x[static_cast<std::size_t>(
                                            (bc * H + 2 * oy + dy) * W + 2 * ox + dx)]);
                out[oi++] = best;
            }
    return out;
}

// Transposed convolution, kernel (IC,OC,2,2), stride 2: scatter loops.
inline std::vector<double> tconv2_loops(const std::vector<double>& x, long B, long IC,
                                        long H, long W, const std::vector<double>& k,
                                        long OC) {
    std::vector<double> out(static_cast<std::size_t>(B * OC * 4 * H * W), 0.0);
    for (long b = 0; b < B; ++b)
        for (long ic = 0; ic < IC; ++ic)
            for (long oc = 0; oc < OC; ++oc)
                for (long y = 0; y < H; ++y)
                    for (long xx = 0; xx < W; ++xx)
                        for (long ky = 0; ky < 2; ++ky)
                            for (long kx = 0; kx < 2; ++kx)
                                out[static_cast<std::size_t>(
                                    ((b * OC + oc) * 2 * H + 2 * y + ky) * 2 * W +
                                    2 * xx + kx)] +=
                                    x[static_cast<std::size_t>(((b * IC + ic) * H + y) *
                                                                   W +
                                                               xx)] *
                                    k[static_cast<std::size_t>(((ic * OC + oc) * 2 + ky) *
                                                                   2 +
                                                               kx)];
    return out;
}

// Central finite differences against autodiff for every listed parameter.
// make_loss must rebuild the forward pass from current parameter values.
// Returns the worst rel. error max|ad-fd| / max(|ad|,|fd|,1); stride
// subsamples elements (1 = exhaustive).
inline double gradcheck(std::vector<usta::Tensor>& params,
                        const std::function<usta::Tensor()>& make_loss,
                        std::size_t stride = 1, double h = 1e-5) {
    for (auto& p : params) p.zero_grad();
    usta::Tensor loss = make_loss();
    loss.backward();
    std::vector<std::vector<double>> ad;
    ad.reserve(params.size());
    for (auto& p : params) ad.push_back(p.grad());

    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& data = params[pi].data();
        for (std::size_t j = 0; j < data.size(); j += stride) {
            const double saved = data[j];
            double lp, lm;
            {
                usta::NoGradGuard ng;
                data[j] = saved + h;
                lp = make_loss().item();
                data[j] = saved - h;
                lm = make_loss().item();
            }
            data[j] = saved;
            const double fd = (lp - lm) / (2.0 * h);
            const double a = ad[pi][j];
            const double rel = std::abs(a - fd) /
                               std::max({std::abs(a), std::abs(fd), 1.0});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

} // namespace oracle
