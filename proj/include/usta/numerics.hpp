// numerics.hpp
//
// Small dense linear algebra and special functions backing the classical
// difference-image generators: a tiny row-major matrix type, a symmetric
// eigensolver (Householder tridiagonalization followed by implicit-shift
// QL), Gauss-Jordan inversion, inverse matrix square root, and the
// regularized incomplete gamma function for chi-square tail probabilities.
// Problem sizes here are the channel counts of multispectral images, so
// everything is written for clarity over asymptotics.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "errors.hpp"

namespace usta {

struct Mat {
    std::size_t rows = 0, cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

    double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }

    static Mat identity(std::size_t n) {
        Mat m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }
};

inline Mat matmul(const Mat& x, const Mat& y) {
    if (x.cols != y.rows) throw ShapeError("matmul: inner dimensions differ");
    Mat z(x.rows, y.cols);
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t k = 0; k < x.cols; ++k) {
            const double v = x(i, k);
            if (v == 0.0) continue;
            for (std::size_t j = 0; j < y.cols; ++j) z(i, j) += v * y(k, j);
        }
    return z;
}

inline Mat transpose(const Mat& x) {
    Mat t(x.cols, x.rows);
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t j = 0; j < x.cols; ++j) t(j, i) = x(i, j);
    return t;
}

// Gauss-Jordan inverse with partial pivoting.
inline Mat inverse(const Mat& x, const std::string& what) {
    if (x.rows != x.cols) throw ShapeError("inverse: matrix not square");
    const std::size_t n = x.rows;
    Mat m = x, inv = Mat::identity(n);
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(m(r, col)) > std::abs(m(piv, col))) piv = r;
        if (std::abs(m(piv, col)) < 1e-300)
            throw NumericError(what + ": singular matrix");
        if (piv != col)
            for (std::size_t j = 0; j < n; ++j) {
                std::swap(m(piv, j), m(col, j));
                std::swap(inv(piv, j), inv(col, j));
            }
        const double d = m(col, col);
        for (std::size_t j = 0; j < n; ++j) {
            m(col, j) /= d;
            inv(col, j) /= d;
        }
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            const double f = m(r, col);
            if (f == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) {
                m(r, j) -= f * m(col, j);
                inv(r, j) -= f * inv(col, j);
            }
        }
    }
    return inv;
}

struct EigenSym {
    std::vector<double> values; // descending
    Mat vectors;                // column j is the eigenvector of values[j]
};

namespace detail {

// Householder reduction of a symmetric matrix to tridiagonal form.
inline void tred2(Mat& z, std::vector<double>& d, std::vector<double>& e) {
    const std::size_t n = z.rows;
    d.assign(n, 0.0);
    e.assign(n, 0.0);
    for (std::size_t i = n - 1; i > 0; --i) {
        const std::size_t l = i - 1;
        double h = 0.0, scale = 0.0;
        if (l > 0) {
            for (std::size_t k = 0; k <= l; ++k) scale += std::abs(z(i, k));
            if (scale == 0.0) {
                e[i] = z(i, l);
            } else {
                for (std::size_t k = 0; k <= l; ++k) {
                    z(i, k) /= scale;
                    h += z(i, k) * z(i, k);
                }
                double f = z(i, l);
                double g = f >= 0.0 ? -std::sqrt(h) : std::sqrt(h);
                e[i] = scale * g;
                h -= f * g;
                z(i, l) = f - g;
                f = 0.0;
                for (std::size_t j = 0; j <= l; ++j) {
                    z(j, i) = z(i, j) / h;
                    g = 0.0;
                    for (std::size_t k = 0; k <= j; ++k) g += z(j, k) * z(i, k);
                    for (std::size_t k = j + 1; k <= l; ++k) g += z(k, j) * z(i, k);
                    e[j] = g / h;
                    f += e[j] * z(i, j);
                }
                const double hh = f / (h + h);
                for (std::size_t j = 0; j <= l; ++j) {
                    f = z(i, j);
                    e[j] = g = e[j] - hh * f;
                    for (std::size_t k = 0; k <= j; ++k)
                        z(j, k) -= f * e[k] + g * z(i, k);
                }
            }
        } else {
            e[i] = z(i, l);
        }
        d[i] = h;
    }
    d[0] = 0.0;
    e[0] = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (d[i] != 0.0) {
            for (std::size_t j = 0; j < i; ++j) {
                double g = 0.0;
                for (std::size_t k = 0; k < i; ++k) g += z(i, k) * z(k, j);
                for (std::size_t k = 0; k < i; ++k) z(k, j) -= g * z(k, i);
            }
        }
        d[i] = z(i, i);
        z(i, i) = 1.0;
        for (std::size_t j = 0; j < i; ++j) z(j, i) = z(i, j) = 0.0;
    }
}

inline double hypot2(double a, double b) { return std::sqrt(a * a + b * b); }

// Implicit-shift QL on the tridiagonal (d, e); accumulates rotations in z.
inline void tqli(std::vector<double>& d, std::vector<double>& e, Mat& z) {
    const std::size_t n = d.size();
    if (n == 0) return;
    for (std::size_t i = 1; i < n; ++i) e[i - 1] = e[i];
    e[n - 1] = 0.0;
    for (std::size_t l = 0; l < n; ++l) {
        int iter = 0;
        std::size_t m;
        do {
            for (m = l; m + 1 < n; ++m) {
                const double dd = std::abs(d[m]) + std::abs(d[m + 1]);
                if (std::abs(e[m]) <= 1e-300 + 2.3e-16 * dd) break;
            }
            if (m != l) {
                if (++iter == 50)
                    throw NumericError("eigen_sym: QL iteration did not converge");
                double g = (d[l + 1] - d[l]) / (2.0 * e[l]);
                double r = hypot2(g, 1.0);
                g = d[m] - d[l] + e[l] / (g + (g >= 0.0 ? std::abs(r) : -std::abs(r)));
                double s = 1.0, c = 1.0, p = 0.0;
                for (std::size_t i = m; i-- > l;) {
                    double f = s * e[i];
                    const double b = c * e[i];
                    r = hypot2(f, g);
                    e[i + 1] = r;
                    if (r == 0.0) {
                        d[i + 1] -= p;
                        e[m] = 0.0;
                        break;
                    }
                    s = f / r;
                    c = g / r;
                    g = d[i + 1] - p;
                    r = (d[i] - g) * s + 2.0 * c * b;
                    p = s * r;
                    d[i + 1] = g + p;
                    g = c * r - b;
                    for (std::size_t k = 0; k < n; ++k) {
                        f = z(k, i + 1);
                        z(k, i + 1) = s * z(k, i) + c * f;
                        z(k, i) = c * z(k, i) - s * f;
                    }
                }
                if (r == 0.0 && m - l > 1) continue;
                d[l] -= p;
                e[l] = g;
                e[m] = 0.0;
            }
        } while (m != l);
    }
}

} // namespace detail

// Eigen-decomposition of a symmetric matrix; eigenvalues sorted descending,
// each eigenvector's sign fixed so its largest-magnitude entry is positive.
inline EigenSym eigen_sym(const Mat& s) {
    if (s.rows != s.cols) throw ShapeError("eigen_sym: matrix not square");
    const std::size_t n = s.rows;
    Mat z = s;
    std::vector<double> d, e;
    detail::tred2(z, d, e);
    detail::tqli(d, e, z);

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return d[i] > d[j]; });

    EigenSym out;
    out.values.resize(n);
    out.vectors = Mat(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t src = order[j];
        out.values[j] = d[src];
        std::size_t arg = 0;
        for (std::size_t i = 1; i < n; ++i)
            if (std::abs(z(i, src)) > std::abs(z(arg, src))) arg = i;
        const double sign = z(arg, src) < 0.0 ? -1.0 : 1.0;
        for (std::size_t i = 0; i < n; ++i) out.vectors(i, j) = sign * z(i, src);
    }
    return out;
}

// Inverse symmetric square root via the eigen-decomposition.  Eigenvalues
// below floor are clamped up to it, keeping the result finite on nearly
// singular inputs.
inline Mat sym_inv_sqrt(const Mat& s, double floor_ev, const std::string& what) {
    const EigenSym es = eigen_sym(s);
    const std::size_t n = s.rows;
    Mat out(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        double ev = es.values[k];
        if (ev < floor_ev) ev = floor_ev;
        if (ev <= 0.0) throw NumericError(what + ": non-positive eigenvalue");
        const double f = 1.0 / std::sqrt(ev);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                out(i, j) += f * es.vectors(i, k) * es.vectors(j, k);
    }
    return out;
}

// Regularized incomplete gamma functions (series for P, continued fraction
// for Q); gammq(a, x) is the chi-square upper tail with a = dof/2, x = t/2.
namespace detail {

inline double gamma_series_p(double a, double x) {
    double ap = a, sum = 1.0 / a, del = sum;
    for (int n = 0; n < 500; ++n) {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if (std::abs(del) < std::abs(sum) * 1e-15)
            return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
    }
    throw NumericError("gamma_series_p: no convergence");
}

inline double gamma_cf_q(double a, double x) {
    const double tiny = 1e-300;
    double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
    for (int i = 1; i <= 500; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-15)
            return h * std::exp(-x + a * std::log(x) - std::lgamma(a));
    }
    throw NumericError("gamma_cf_q: no convergence");
}

} // namespace detail

inline double gammq(double a, double x) {
    if (!(a > 0.0) || x < 0.0) throw ArgumentError("gammq: bad arguments");
    if (x == 0.0) return 1.0;
    if (x < a + 1.0) return 1.0 - detail::gamma_series_p(a, x);
    return detail::gamma_cf_q(a, x);
}

// Upper-tail probability of the chi-square distribution with dof degrees.
inline double chi2_tail(double t, double dof) {
    if (!(dof > 0.0)) throw ArgumentError("chi2_tail: dof must be > 0");
    if (t <= 0.0) return 1.0;
    return gammq(0.5 * dof, 0.5 * t);
}

} // namespace usta
