// classical_di.hpp
//
// Classical difference-image generators: image differencing, image
// ratioing, change vector analysis, PCA on difference vectors, MAD
// (canonical correlation analysis) and its iteratively reweighted
// variant IR-MAD.  Every generator returns a ScalarMap in [0,1].

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "errors.hpp"
#include "numerics.hpp"
#include "raster.hpp"

namespace usta {

namespace detail {

inline void require_same_shape(const RasterImage& x1, const RasterImage& x2,
                               const char* who) {
    if (x1.height != x2.height || x1.width != x2.width ||
        x1.channels != x2.channels)
        throw ShapeError(std::string(who) + ": input dimensions differ");
}

inline ScalarMap rescale_min_max(std::size_t h, std::size_t w,
                                 const std::vector<double>& v) {
    double lo = v[0], hi = v[0];
    for (double x : v) {
        if (x < lo) lo = x;
        if (x > hi) hi = x;
    }
    ScalarMap out(h, w);
    if (hi > lo)
        for (std::size_t i = 0; i < v.size(); ++i)
            out.data[i] = (v[i] - lo) / (hi - lo);
    return out;
}

} // namespace detail

inline ScalarMap cva(const RasterImage& x1, const RasterImage& x2) {
    detail::require_same_shape(x1, x2, "cva");
    ScalarMap out(x1.height, x1.width);
    const double norm = std::sqrt(static_cast<double>(x1.channels));
    const std::size_t n = x1.height * x1.width, c = x1.channels;
    for (std::size_t p = 0; p < n; ++p) {
        double s = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double d = x1.data[p * c + ch] - x2.data[p * c + ch];
            s += d * d;
        }
        out.data[p] = std::sqrt(s) / norm;
    }
    return out;
}

inline ScalarMap image_diff(const RasterImage& x1, const RasterImage& x2) {
    detail::require_same_shape(x1, x2, "image_diff");
    ScalarMap out(x1.height, x1.width);
    const std::size_t n = x1.height * x1.width, c = x1.channels;
    for (std::size_t p = 0; p < n; ++p) {
        double s = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch)
            s += std::abs(x1.data[p * c + ch] - x2.data[p * c + ch]);
        out.data[p] = s / static_cast<double>(c);
    }
    return out;
}

inline ScalarMap image_ratio(const RasterImage& x1, const RasterImage& x2) {
    detail::require_same_shape(x1, x2, "image_ratio");
    constexpr double eps = 1e-3;
    ScalarMap out(x1.height, x1.width);
    const std::size_t n = x1.height * x1.width, c = x1.channels;
    for (std::size_t p = 0; p < n; ++p) {
        double s = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double a = x1.data[p * c + ch] + eps;
            const double b = x2.data[p * c + ch] + eps;
            s += 1.0 - (a < b ? a / b : b / a);
        }
        out.data[p] = s / static_cast<double>(c);
    }
    return out;
}

inline ScalarMap pca_di(const RasterImage& x1, const RasterImage& x2,
                        std::size_t k) {
    detail::require_same_shape(x1, x2, "pca_di");
    const std::size_t c = x1.channels;
    if (k < 1 || k > c) throw ArgumentError("pca_di: k out of range");
    const std::size_t n = x1.height * x1.width;

    std::vector<double> d(n * c);
    std::vector<double> mean(c, 0.0);
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double v = x1.data[p * c + ch] - x2.data[p * c + ch];
            d[p * c + ch] = v;
            mean[ch] += v;
        }
    for (std::size_t ch = 0; ch < c; ++ch) mean[ch] /= static_cast<double>(n);

    Mat cov(c, c);
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t i = 0; i < c; ++i)
            for (std::size_t j = i; j < c; ++j)
                cov(i, j) += (d[p * c + i] - mean[i]) * (d[p * c + j] - mean[j]);
    for (std::size_t i = 0; i < c; ++i)
        for (std::size_t j = i; j < c; ++j)
            cov(j, i) = cov(i, j) /= static_cast<double>(n);

    const EigenSym es = eigen_sym(cov);

    // Project the raw difference vectors onto the top-k eigenvectors; a
    // 1-channel input then ranks pixels exactly as image differencing.
    std::vector<double> energy(n, 0.0);
    for (std::size_t p = 0; p < n; ++p) {
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            double proj = 0.0;
            for (std::size_t ch = 0; ch < c; ++ch)
                proj += d[p * c + ch] * es.vectors(ch, j);
            s += proj * proj;
        }
        energy[p] = std::sqrt(s);
    }
    return detail::rescale_min_max(x1.height, x1.width, energy);
}

namespace detail {

struct MadCore {
    std::vector<double> chi; // raw chi-square statistic per pixel
    std::vector<double> rho; // canonical correlations, descending
};

// Weighted canonical correlation analysis between the channels of x1 and
// x2; MAD variates are differences of paired canonical variates and chi
// is their standardized squared sum.
inline MadCore weighted_mad(const RasterImage& x1, const RasterImage& x2,
                            const std::vector<double>& wts) {
    const std::size_t c = x1.channels, n = x1.height * x1.width;

    double wsum = 0.0;
    for (double w : wts) wsum += w;
    if (!(wsum > 0.0)) throw NumericError("mad: weights sum to zero");

    std::vector<double> mu1(c, 0.0), mu2(c, 0.0);
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t ch = 0; ch < c; ++ch) {
            mu1[ch] += wts[p] * x1.data[p * c + ch];
            mu2[ch] += wts[p] * x2.data[p * c + ch];
        }
    for (std::size_t ch = 0; ch < c; ++ch) {
        mu1[ch] /= wsum;
        mu2[ch] /= wsum;
    }

    Mat s11(c, c), s22(c, c), s12(c, c);
    for (std::size_t p = 0; p < n; ++p) {
        const double w = wts[p];
        if (w == 0.0) continue;
        for (std::size_t i = 0; i < c; ++i) {
            const double a = x1.data[p * c + i] - mu1[i];
            const double b2 = x2.data[p * c + i] - mu2[i];
            for (std::size_t j = 0; j < c; ++j) {
                s11(i, j) += w * a * (x1.data[p * c + j] - mu1[j]);
                s22(i, j) += w * b2 * (x2.data[p * c + j] - mu2[j]);
                s12(i, j) += w * a * (x2.data[p * c + j] - mu2[j]);
            }
        }
    }
    for (std::size_t i = 0; i < c; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            s11(i, j) /= wsum;
            s22(i, j) /= wsum;
            s12(i, j) /= wsum;
        }

    // Ridge keeps desk-scale covariances invertible.
    double tr1 = 0.0, tr2 = 0.0;
    for (std::size_t i = 0; i < c; ++i) {
        tr1 += s11(i, i);
        tr2 += s22(i, i);
    }
    const double lam1 = 1e-6 * tr1 / static_cast<double>(c);
    const double lam2 = 1e-6 * tr2 / static_cast<double>(c);
    for (std::size_t i = 0; i < c; ++i) {
        s11(i, i) += lam1;
        s22(i, i) += lam2;
    }

    const Mat w1 = sym_inv_sqrt(s11, 0.0, "mad S11");
    const Mat s22_inv = inverse(s22, "mad S22");
    const Mat s21 = transpose(s12);
    const Mat t = matmul(matmul(matmul(matmul(w1, s12), s22_inv), s21), w1);
    const EigenSym es = eigen_sym(t);

    MadCore out;
    out.rho.resize(c);
    std::vector<std::vector<double>> avec(c, std::vector<double>(c, 0.0));
    std::vector<std::vector<double>> bvec(c, std::vector<double>(c, 0.0));
    for (std::size_t j = 0; j < c; ++j) {
        double ev = es.values[j];
        if (ev < 0.0) ev = 0.0;
        if (ev > 1.0) ev = 1.0;
        out.rho[j] = std::sqrt(ev);
        for (std::size_t i = 0; i < c; ++i)
            for (std::size_t ch = 0; ch < c; ++ch)
                avec[j][i] += w1(i, ch) * es.vectors(ch, j);

        // b = S22^-1 S21 a, rescaled to unit variance; flip so that the
        // canonical pair correlates positively.
        std::vector<double> s21a(c, 0.0);
        for (std::size_t i = 0; i < c; ++i)
            for (std::size_t ch = 0; ch < c; ++ch)
                s21a[i] += s21(i, ch) * avec[j][ch];
        for (std::size_t i = 0; i < c; ++i)
            for (std::size_t ch = 0; ch < c; ++ch)
                bvec[j][i] += s22_inv(i, ch) * s21a[ch];
        double var_b = 0.0;
        for (std::size_t i = 0; i < c; ++i)
            for (std::size_t ch = 0; ch < c; ++ch)
                var_b += bvec[j][i] * s22(i, ch) * bvec[j][ch];
        if (var_b > 1e-300) {
            const double f = 1.0 / std::sqrt(var_b);
            for (std::size_t i = 0; i < c; ++i) bvec[j][i] *= f;
        }
        double corr = 0.0;
        for (std::size_t i = 0; i < c; ++i)
            for (std::size_t ch = 0; ch < c; ++ch)
                corr += avec[j][i] * s12(i, ch) * bvec[j][ch];
        if (corr < 0.0)
            for (std::size_t i = 0; i < c; ++i) bvec[j][i] = -bvec[j][i];
    }

    out.chi.assign(n, 0.0);
    for (std::size_t p = 0; p < n; ++p) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            double m = 0.0;
            for (std::size_t ch = 0; ch < c; ++ch)
                m += avec[j][ch] * (x1.data[p * c + ch] - mu1[ch]) -
                     bvec[j][ch] * (x2.data[p * c + ch] - mu2[ch]);
            double var = 2.0 * (1.0 - out.rho[j]);
            if (var < 1e-12) var = 1e-12;
            s += m * m / var;
        }
        out.chi[p] = s;
    }
    return out;
}

// A maximum statistic this small is numerical residue, not change
// evidence; report the clean all-zero map instead of stretching it.
inline ScalarMap chi_to_map(std::size_t h, std::size_t w,
                            const std::vector<double>& chi) {
    double hi = 0.0;
    for (double v : chi) hi = std::max(hi, v);
    if (hi <= 1e-9) return ScalarMap(h, w);
    return rescale_min_max(h, w, chi);
}

} // namespace detail

inline ScalarMap mad(const RasterImage& x1, const RasterImage& x2) {
    detail::require_same_shape(x1, x2, "mad");
    const std::vector<double> unit(x1.height * x1.width, 1.0);
    const detail::MadCore core = detail::weighted_mad(x1, x2, unit);
    return detail::chi_to_map(x1.height, x1.width, core.chi);
}

inline ScalarMap irmad(const RasterImage& x1, const RasterImage& x2,
                       std::size_t max_iter, double tol) {
    detail::require_same_shape(x1, x2, "irmad");
    if (max_iter < 1) throw ArgumentError("irmad: max_iter must be >= 1");
    if (!(tol > 0.0)) throw ArgumentError("irmad: tol must be > 0");

    const std::size_t n = x1.height * x1.width;
    const double dof = static_cast<double>(x1.channels);
    std::vector<double> wts(n, 1.0);
    detail::MadCore core = detail::weighted_mad(x1, x2, wts);
    for (std::size_t it = 1; it < max_iter; ++it) {
        for (std::size_t p = 0; p < n; ++p)
            wts[p] = chi2_tail(core.chi[p], dof);
        detail::MadCore next = detail::weighted_mad(x1, x2, wts);
        double delta = 0.0;
        for (std::size_t j = 0; j < next.rho.size(); ++j)
            delta = std::max(delta, std::abs(next.rho[j] - core.rho[j]));
        core = std::move(next);
        if (delta < tol) break;
    }
    return detail::chi_to_map(x1.height, x1.width, core.chi);
}

} // namespace usta
