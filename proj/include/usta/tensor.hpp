// tensor.hpp
//
// Minimal reverse-mode automatic differentiation over dense n-D tensors,
// 64-bit throughout.  The op set is exactly what the change detection
// network needs: conv2d (cross-correlation, stride 1, zero padding),
// 2x2 max pooling, 2x2 stride-2 transposed convolution, batch
// normalization, ReLU, Sigmoid, channel concatenation, and a few scalar
// composition helpers for building losses.
//
// Graph model: every op produces a fresh node holding its output values
// and, when gradients are enabled, a closure that scatters the node's
// gradient into its parents.  Parameter (leaf) gradients persist across
// backward calls and accumulate until zero_grad(); intermediate nodes are
// recreated each forward pass, so their accumulators always start at zero.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"

namespace usta {

namespace detail {
inline thread_local bool grad_enabled = true;
}

// Disables graph construction for its scope (prediction, evaluation).
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_enabled) { detail::grad_enabled = false; }
    ~NoGradGuard() { detail::grad_enabled = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

struct TensorNode {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    std::vector<double> grad; // same length as data iff requires_grad
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;
};

namespace detail {

inline std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

inline std::shared_ptr<TensorNode> make_node(std::vector<std::size_t> shape,
                                             bool requires_grad) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data.assign(shape_numel(n->shape), 0.0);
    n->requires_grad = requires_grad;
    if (requires_grad) n->grad.assign(n->data.size(), 0.0);
    return n;
}

} // namespace detail

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode> n) : n_(std::move(n)) {}

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false) {
        return Tensor(detail::make_node(std::move(shape), requires_grad));
    }

    static Tensor from_data(std::vector<std::size_t> shape, std::vector<double> values,
                            bool requires_grad = false) {
        auto n = detail::make_node(std::move(shape), requires_grad);
        if (values.size() != n->data.size())
            throw ShapeError("Tensor: data length does not match shape");
        n->data = std::move(values);
        return Tensor(std::move(n));
    }

    bool defined() const { return static_cast<bool>(n_); }
    const std::vector<std::size_t>& shape() const { return node().shape; }
    std::size_t numel() const { return node().data.size(); }
    bool requires_grad() const { return node().requires_grad; }

    std::vector<double>& data() { return node().data; }
    const std::vector<double>& data() const { return node().data; }

    std::vector<double>& grad() {
        if (!node().requires_grad)
            throw StateError("Tensor: gradient requested on a non-grad tensor");
        return node().grad;
    }
    const std::vector<double>& grad() const {
        if (!node().requires_grad)
            throw StateError("Tensor: gradient requested on a non-grad tensor");
        return node().grad;
    }

    void zero_grad() {
        if (node().requires_grad)
            std::fill(node().grad.begin(), node().grad.end(), 0.0);
    }

    double item() const {
        if (numel() != 1) throw ArgumentError("Tensor::item: not a scalar");
        return node().data[0];
    }

    // Reverse-mode sweep from a scalar: seeds d(loss)/d(loss) = 1 and
    // propagates through the recorded graph in reverse topological order.
    void backward() {
        if (numel() != 1)
            throw ArgumentError("backward: loss tensor must be scalar");
        if (!node().requires_grad)
            throw StateError("backward: loss is not connected to any parameter");

        std::vector<TensorNode*> order;
        std::unordered_set<TensorNode*> seen;
        std::vector<std::pair<TensorNode*, std::size_t>> stack;
        stack.emplace_back(n_.get(), 0);
        seen.insert(n_.get());
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                TensorNode* p = node->parents[next++].get();
                if (p->requires_grad && seen.insert(p).second)
                    stack.emplace_back(p, 0);
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }

        n_->grad[0] += 1.0;
        for (auto it = order.rbegin(); it != order.rend(); ++it)
            if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }

    TensorNode& node() {
        if (!n_) throw StateError("Tensor: undefined");
        return *n_;
    }
    const TensorNode& node() const {
        if (!n_) throw StateError("Tensor: undefined");
        return *n_;
    }
    const std::shared_ptr<TensorNode>& ptr() const { return n_; }

private:
    std::shared_ptr<TensorNode> n_;
};

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

namespace detail {

// C(MxR) += A(MxN) * B(RxN)^T, row-major with leading dimension ldc, 4x4
// register tiles over dot products; Acc=false assigns instead of accumulating
template <bool Acc>
inline void gemm_nt_impl(long M, long R, long N, const double* A,
                         const double* B, double* C, long ldc) {
    long m = 0;
    for (; m + 4 <= M; m += 4) {
        const double* __restrict__ a0 = A + (m + 0) * N;
        const double* __restrict__ a1 = A + (m + 1) * N;
        const double* __restrict__ a2 = A + (m + 2) * N;
        const double* __restrict__ a3 = A + (m + 3) * N;
        long r = 0;
        for (; r + 4 <= R; r += 4) {
            const double* __restrict__ b0 = B + (r + 0) * N;
            const double* __restrict__ b1 = B + (r + 1) * N;
            const double* __restrict__ b2 = B + (r + 2) * N;
            const double* __restrict__ b3 = B + (r + 3) * N;
            double s00 = 0, s01 = 0, s02 = 0, s03 = 0;
            double s10 = 0, s11 = 0, s12 = 0, s13 = 0;
            double s20 = 0, s21 = 0, s22 = 0, s23 = 0;
            double s30 = 0, s31 = 0, s32 = 0, s33 = 0;
#pragma omp simd reduction(+ : s00, s01, s02, s03, s10, s11, s12, s13, s20,   \
                               s21, s22, s23, s30, s31, s32, s33)
            for (long n = 0; n < N; ++n) {
                const double b0n = b0[n], b1n = b1[n], b2n = b2[n], b3n = b3[n];
                const double a0n = a0[n], a1n = a1[n], a2n = a2[n], a3n = a3[n];
                s00 += a0n * b0n; s01 += a0n * b1n; s02 += a0n * b2n; s03 += a0n * b3n;
                s10 += a1n * b0n; s11 += a1n * b1n; s12 += a1n * b2n; s13 += a1n * b3n;
                s20 += a2n * b0n; s21 += a2n * b1n; s22 += a2n * b2n; s23 += a2n * b3n;
                s30 += a3n * b0n; s31 += a3n * b1n; s32 += a3n * b2n; s33 += a3n * b3n;
            }
            double* c0 = C + (m + 0) * ldc + r;
            double* c1 = C + (m + 1) * ldc + r;
            double* c2 = C + (m + 2) * ldc + r;
            double* c3 = C + (m + 3) * ldc + r;
            if constexpr (Acc) {
                c0[0] += s00; c0[1] += s01; c0[2] += s02; c0[3] += s03;
                c1[0] += s10; c1[1] += s11; c1[2] += s12; c1[3] += s13;
                c2[0] += s20; c2[1] += s21; c2[2] += s22; c2[3] += s23;
                c3[0] += s30; c3[1] += s31; c3[2] += s32; c3[3] += s33;
            } else {
                c0[0] = s00; c0[1] = s01; c0[2] = s02; c0[3] = s03;
                c1[0] = s10; c1[1] = s11; c1[2] = s12; c1[3] = s13;
                c2[0] = s20; c2[1] = s21; c2[2] = s22; c2[3] = s23;
                c3[0] = s30; c3[1] = s31; c3[2] = s32; c3[3] = s33;
            }
        }
        for (; r < R; ++r) {
            const double* __restrict__ br = B + r * N;
            double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
#pragma omp simd reduction(+ : s0, s1, s2, s3)
            for (long n = 0; n < N; ++n) {
                const double bn = br[n];
                s0 += a0[n] * bn;
                s1 += a1[n] * bn;
                s2 += a2[n] * bn;
                s3 += a3[n] * bn;
            }
            if constexpr (Acc) {
                C[(m + 0) * ldc + r] += s0;
                C[(m + 1) * ldc + r] += s1;
                C[(m + 2) * ldc + r] += s2;
                C[(m + 3) * ldc + r] += s3;
            } else {
                C[(m + 0) * ldc + r] = s0;
                C[(m + 1) * ldc + r] = s1;
                C[(m + 2) * ldc + r] = s2;
                C[(m + 3) * ldc + r] = s3;
            }
        }
    }
    for (; m < M; ++m) {
        const double* __restrict__ ar = A + m * N;
        long r = 0;
        for (; r + 4 <= R; r += 4) {
            const double* __restrict__ b0 = B + (r + 0) * N;
            const double* __restrict__ b1 = B + (r + 1) * N;
            const double* __restrict__ b2 = B + (r + 2) * N;
            const double* __restrict__ b3 = B + (r + 3) * N;
            double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
#pragma omp simd reduction(+ : s0, s1, s2, s3)
            for (long n = 0; n < N; ++n) {
                const double an = ar[n];
                s0 += an * b0[n];
                s1 += an * b1[n];
                s2 += an * b2[n];
                s3 += an * b3[n];
            }
            double* cr = C + m * ldc + r;
            if constexpr (Acc) {
                cr[0] += s0; cr[1] += s1; cr[2] += s2; cr[3] += s3;
            } else {
                cr[0] = s0; cr[1] = s1; cr[2] = s2; cr[3] = s3;
            }
        }
        for (; r < R; ++r) {
            const double* __restrict__ br = B + r * N;
            double s = 0;
#pragma omp simd reduction(+ : s)
            for (long n = 0; n < N; ++n) s += ar[n] * br[n];
            if constexpr (Acc)
                C[m * ldc + r] += s;
            else
                C[m * ldc + r] = s;
        }
    }
}

inline void gemm_nt(long M, long R, long N, const double* A, const double* B,
                    double* C) {
    gemm_nt_impl<true>(M, R, N, A, B, C, R);
}

// C(MxN) = A(MxK) * B(KxN), A packed row-major, B/C row-major with leading
// dimensions ldb/ldc, rank-1 updates over 4-row tiles; Acc=false makes the
// first rank-1 update assign so C may start uninitialized
template <bool Acc>
inline void gemm_nn_impl(long M, long N, long K, const double* A,
                         const double* B, long ldb, double* C, long ldc) {
    long m = 0;
    for (; m + 4 <= M; m += 4) {
        const double* a0 = A + (m + 0) * K;
        const double* a1 = A + (m + 1) * K;
        const double* a2 = A + (m + 2) * K;
        const double* a3 = A + (m + 3) * K;
        double* __restrict__ c0 = C + (m + 0) * ldc;
        double* __restrict__ c1 = C + (m + 1) * ldc;
        double* __restrict__ c2 = C + (m + 2) * ldc;
        double* __restrict__ c3 = C + (m + 3) * ldc;
        if constexpr (!Acc) {
            const double* __restrict__ br = B;
            const double w0 = a0[0], w1 = a1[0], w2 = a2[0], w3 = a3[0];
#pragma omp simd
            for (long n = 0; n < N; ++n) {
                const double bn = br[n];
                c0[n] = w0 * bn;
                c1[n] = w1 * bn;
                c2[n] = w2 * bn;
                c3[n] = w3 * bn;
            }
        }
        for (long k = Acc ? 0 : 1; k < K; ++k) {
            const double* __restrict__ br = B + k * ldb;
            const double w0 = a0[k], w1 = a1[k], w2 = a2[k], w3 = a3[k];
#pragma omp simd
            for (long n = 0; n < N; ++n) {
                const double bn = br[n];
                c0[n] += w0 * bn;
                c1[n] += w1 * bn;
                c2[n] += w2 * bn;
                c3[n] += w3 * bn;
            }
        }
    }
    for (; m < M; ++m) {
        const double* ar = A + m * K;
        double* __restrict__ cr = C + m * ldc;
        if constexpr (!Acc) {
            const double* __restrict__ br = B;
            const double w = ar[0];
#pragma omp simd
            for (long n = 0; n < N; ++n) cr[n] = w * br[n];
        }
        for (long k = Acc ? 0 : 1; k < K; ++k) {
            const double* __restrict__ br = B + k * ldb;
            const double w = ar[k];
#pragma omp simd
            for (long n = 0; n < N; ++n) cr[n] += w * br[n];
        }
    }
}

inline void gemm_nn_set(long M, long N, long K, const double* A,
                        const double* B, double* C) {
    gemm_nn_impl<false>(M, N, K, A, B, N, C, N);
}

inline void gemm_nn_acc(long M, long N, long K, const double* A,
                        const double* B, double* C) {
    gemm_nn_impl<true>(M, N, K, A, B, N, C, N);
}

inline void gemm_nn_acc_ld(long M, long N, long K, const double* A,
                           const double* B, long ldb, double* C, long ldc) {
    gemm_nn_impl<true>(M, N, K, A, B, ldb, C, ldc);
}

// patch matrix, one row per kernel tap: col[(ic*K+ky)*K+kx][oy*OW+ox];
// stride-1 structure makes every row a shifted copy of an input plane, so
// rows are filled with contiguous segment copies plus zeroed borders
inline void im2col_rows(const double* x, long IC, long H, long W, long K,
                        long P, long OH, long OW, double* col) {
    double* cr = col;
    for (long ic = 0; ic < IC; ++ic) {
        const double* xplane = x + ic * H * W;
        for (long ky = 0; ky < K; ++ky)
            for (long kx = 0; kx < K; ++kx, cr += OH * OW) {
                const long dy = ky - P, dx = kx - P;
                const long xlo = std::max(0L, -dx), xhi = std::min(OW, W - dx);
                for (long oy = 0; oy < OH; ++oy) {
                    double* dst = cr + oy * OW;
                    const long iy = oy + dy;
                    if (iy < 0 || iy >= H || xlo >= xhi) {
                        std::fill(dst, dst + OW, 0.0);
                        continue;
                    }
                    for (long ox = 0; ox < xlo; ++ox) dst[ox] = 0.0;
                    const double* src = xplane + iy * W + xlo + dx;
                    std::copy(src, src + (xhi - xlo), dst + xlo);
                    for (long ox = xhi; ox < OW; ++ox) dst[ox] = 0.0;
                }
            }
    }
}

// reusable per-thread buffers so hot conv paths avoid repeated large allocations;
// grow-only so oscillating layer sizes do not trigger fresh zero-fills
inline double* scratch(int which, std::size_t n) {
    thread_local std::vector<double> bufs[4];
    auto& b = bufs[which];
    if (b.size() < n) b.resize(n);
    return b.data();
}

}  // namespace detail

inline Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias,
                     std::size_t padding) {
    const auto& xs = x.shape();
    const auto& ks = kernel.shape();
    if (xs.size() != 4) throw ShapeError("conv2d: input must be (B,C,H,W)");
    if (ks.size() != 4 || ks[2] != ks[3])
        throw ShapeError("conv2d: kernel must be (OC,IC,k,k)");
    if (xs[1] != ks[1])
        throw ShapeError("conv2d: input channels " + std::to_string(xs[1]) +
                         " != kernel channels " + std::to_string(ks[1]));
    if (bias.shape() != std::vector<std::size_t>{ks[0]})
        throw ShapeError("conv2d: bias must be (OC)");

    const long B = static_cast<long>(xs[0]), IC = static_cast<long>(xs[1]);
    const long H = static_cast<long>(xs[2]), W = static_cast<long>(xs[3]);
    const long OC = static_cast<long>(ks[0]), K = static_cast<long>(ks[2]);
    const long P = static_cast<long>(padding);
    const long OH = H + 2 * P - K + 1, OW = W + 2 * P - K + 1;
    if (OH < 1 || OW < 1) throw ShapeError("conv2d: kernel larger than padded input");

    const bool rg = detail::grad_enabled &&
                    (x.requires_grad() || kernel.requires_grad() || bias.requires_grad());
    auto out = detail::make_node(
        {xs[0], ks[0], static_cast<std::size_t>(OH), static_cast<std::size_t>(OW)}, rg);

    const double* xd = x.data().data();
    const double* kd = kernel.data().data();
    const double* bd = bias.data().data();
    double* od = out->data.data();
    // one packed (OC x IC) GEMM per kernel tap, applied to shifted input rows,
    // so no patch matrix is ever materialized
    const long KK = K * K, NOUT = OH * OW, HW = H * W;
    double* ktap = detail::scratch(0, static_cast<std::size_t>(KK) * OC * IC);
    for (long oc = 0; oc < OC; ++oc)
        for (long ic = 0; ic < IC; ++ic) {
            const double* s = kd + (oc * IC + ic) * KK;
            for (long t = 0; t < KK; ++t) ktap[(t * OC + oc) * IC + ic] = s[t];
        }
    for (long b = 0; b < B; ++b) {
        const double* xb = xd + b * IC * HW;
        double* ob = od + b * OC * NOUT;
        for (long oc = 0; oc < OC; ++oc)
            std::fill(ob + oc * NOUT, ob + (oc + 1) * NOUT, bd[oc]);
        for (long ky = 0; ky < K; ++ky)
            for (long kx = 0; kx < K; ++kx) {
                const long dy = ky - P, dx = kx - P;
                const long oylo = std::max(0L, -dy), oyhi = std::min(OH, H - dy);
                const long xlo = std::max(0L, -dx), xhi = std::min(OW, W - dx);
                if (oylo >= oyhi || xlo >= xhi) continue;
                const double* At = ktap + (ky * K + kx) * OC * IC;
                if (dx == 0 && xhi - xlo == OW && OW == W) {
                    detail::gemm_nn_acc_ld(OC, (oyhi - oylo) * W, IC, At,
                                           xb + (oylo + dy) * W, HW,
                                           ob + oylo * OW, NOUT);
                } else {
                    for (long oy = oylo; oy < oyhi; ++oy)
                        detail::gemm_nn_acc_ld(OC, xhi - xlo, IC, At,
                                               xb + (oy + dy) * W + xlo + dx,
                                               HW, ob + oy * OW + xlo, NOUT);
                }
            }
    }

    Tensor result(out);
    if (rg) {
        auto xn = x.ptr(), kn = kernel.ptr(), bn = bias.ptr();
        out->parents = {xn, kn, bn};
        out->backward_fn = [xn, kn, bn, B, IC, OC, H, W, K, P, OH,
                            OW](TensorNode& self) {
            const double* gd = self.grad.data();
            if (bn->requires_grad) {
                double* gb = bn->grad.data();
                for (long b = 0; b < B; ++b)
                    for (long oc = 0; oc < OC; ++oc) {
                        const double* gplane = gd + (b * OC + oc) * OH * OW;
                        double s = 0.0;
                        for (long i = 0; i < OH * OW; ++i) s += gplane[i];
                        gb[oc] += s;
                    }
            }
            const bool need_x = xn->requires_grad, need_k = kn->requires_grad;
            if (!need_x && !need_k) return;
            const long CK = IC * K * K, NOUT = OH * OW, KK = K * K;
            const long HW = H * W, P2 = K - 1 - P;
            const double* kd2 = kn->data.data();
            const double* xd2 = xn->data.data();
            double* col = need_k
                ? detail::scratch(0, static_cast<std::size_t>(CK) * NOUT)
                : nullptr;
            // dX is the convolution of the output gradient with the kernel
            // rotated 180 degrees and transposed across channels, at the
            // complementary padding, done with the same per-tap GEMMs
            double* krot = nullptr;
            if (need_x) {
                krot = detail::scratch(2, static_cast<std::size_t>(CK) * OC);
                for (long oc = 0; oc < OC; ++oc)
                    for (long ic = 0; ic < IC; ++ic) {
                        const double* s = kd2 + (oc * IC + ic) * KK;
                        for (long t = 0; t < KK; ++t)
                            krot[(t * IC + ic) * OC + oc] = s[KK - 1 - t];
                    }
            }
            for (long b = 0; b < B; ++b) {
                const double* gb = gd + b * OC * NOUT;
                if (need_k) {
                    detail::im2col_rows(xd2 + b * IC * HW, IC, H, W, K, P,
                                        OH, OW, col);
                    detail::gemm_nt(OC, CK, NOUT, gb, col, kn->grad.data());
                }
                if (need_x) {
                    double* gx = xn->grad.data() + b * IC * HW;
                    for (long ky = 0; ky < K; ++ky)
                        for (long kx = 0; kx < K; ++kx) {
                            const long dy = ky - P2, dx = kx - P2;
                            const long ylo = std::max(0L, -dy);
                            const long yhi = std::min(H, OH - dy);
                            const long xlo = std::max(0L, -dx);
                            const long xhi = std::min(W, OW - dx);
                            if (ylo >= yhi || xlo >= xhi) continue;
                            const double* At = krot + (ky * K + kx) * IC * OC;
                            if (dx == 0 && xhi - xlo == W && W == OW) {
                                detail::gemm_nn_acc_ld(IC, (yhi - ylo) * W, OC,
                                                       At, gb + (ylo + dy) * OW,
                                                       NOUT, gx + ylo * W, HW);
                            } else {
                                for (long y = ylo; y < yhi; ++y)
                                    detail::gemm_nn_acc_ld(
                                        IC, xhi - xlo, OC, At,
                                        gb + (y + dy) * OW + xlo + dx, NOUT,
                                        gx + y * W + xlo, HW);
                            }
                        }
                }
            }
        };
    }
    return result;
}

// ---------------------------------------------------------------------------
// pooling
// ---------------------------------------------------------------------------

inline Tensor maxpool2(const Tensor& x) {
    const auto& xs = x.shape();
    if (xs.size() != 4) throw ShapeError("maxpool2: input must be (B,C,H,W)");
    if (xs[2] % 2 != 0 || xs[3] % 2 != 0)
        throw ShapeError("maxpool2: spatial dims must be even");

    const std::size_t B = xs[0], C = xs[1], H = xs[2], W = xs[3];
    const std::size_t OH = H / 2, OW = W / 2;
    const bool rg = detail::grad_enabled && x.requires_grad();
    auto out = detail::make_node({B, C, OH, OW}, rg);

    std::vector<std::uint32_t> argmax(rg ? out->data.size() : 0);
    const double* xd = x.data().data();
    double* od = out->data.data();
    std::size_t oi = 0;
    for (std::size_t bc = 0; bc < B * C; ++bc) {
        const double* plane = xd + bc * H * W;
        for (std::size_t oy = 0; oy < OH; ++oy)
            for (std::size_t ox = 0; ox < OW; ++ox, ++oi) {
                // first occurrence wins ties, scanning the window row-major
                std::size_t best = 2 * oy * W + 2 * ox;
                double bv = plane[best];
                const std::size_t cand[3] = {best + 1, best + W, best + W + 1};
                for (std::size_t c2 : cand)
                    if (plane[c2] > bv) {
                        bv = plane[c2];
                        best = c2;
                    }
                od[oi] = bv;
                if (rg)
                    argmax[oi] = static_cast<std::uint32_t>(bc * H * W + best);
            }
    }

    Tensor result(out);
    if (rg) {
        auto xn = x.ptr();
        out->parents = {xn};
        out->backward_fn = [xn, argmax = std::move(argmax)](TensorNode& self) {
            double* gx = xn->grad.data();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                gx[argmax[i]] += self.grad[i];
        };
    }
    return result;
}

// ---------------------------------------------------------------------------
// transposed convolution (2x2 kernel, stride 2: exact spatial doubling)
// ---------------------------------------------------------------------------

inline Tensor tconv2(const Tensor& x, const Tensor& kernel) {
    const auto& xs = x.shape();
    const auto& ks = kernel.shape();
    if (xs.size() != 4) throw ShapeError("tconv2: input must be (B,C,H,W)");
    if (ks.size() != 4 || ks[2] != 2 || ks[3] != 2)
        throw ShapeError("tconv2: kernel must be (IC,OC,2,2)");
    if (xs[1] != ks[0])
        throw ShapeError("tconv2: input channels " + std::to_string(xs[1]) +
                         " != kernel channels " + std::to_string(ks[0]));

    const std::size_t B = xs[0], IC = xs[1], H = xs[2], W = xs[3], OC = ks[1];
    const bool rg = detail::grad_enabled && (x.requires_grad() || kernel.requires_grad());
    auto out = detail::make_node({B, OC, 2 * H, 2 * W}, rg);

    // quad layout: row (oc*4 + dy*2 + dx) holds the output tap (2y+dy, 2x+dx)
    // over input cells, so the op is one GEMM plus an interleave pass
    const std::size_t HW = H * W;
    const double* xd = x.data().data();
    const double* kd = kernel.data().data();
    double* od = out->data.data();
    double* quad = detail::scratch(0, 4 * OC * HW);
    double* kq = detail::scratch(1, 4 * OC * IC);
    for (std::size_t ic = 0; ic < IC; ++ic)
        for (std::size_t oc = 0; oc < OC; ++oc) {
            const double* kw = kd + (ic * OC + oc) * 4;
            for (std::size_t t = 0; t < 4; ++t) kq[(oc * 4 + t) * IC + ic] = kw[t];
        }
    for (std::size_t b = 0; b < B; ++b) {
        detail::gemm_nn_set(static_cast<long>(4 * OC), static_cast<long>(HW),
                    static_cast<long>(IC), kq, xd + b * IC * HW, quad);
        for (std::size_t oc = 0; oc < OC; ++oc) {
            const double* q0 = quad + (oc * 4 + 0) * HW;
            const double* q1 = quad + (oc * 4 + 1) * HW;
            const double* q2 = quad + (oc * 4 + 2) * HW;
            const double* q3 = quad + (oc * 4 + 3) * HW;
            double* oplane = od + (b * OC + oc) * 4 * HW;
            for (std::size_t y = 0; y < H; ++y) {
                double* __restrict__ orow0 = oplane + (2 * y) * 2 * W;
                double* __restrict__ orow1 = orow0 + 2 * W;
                const double* qr0 = q0 + y * W;
                const double* qr1 = q1 + y * W;
                const double* qr2 = q2 + y * W;
                const double* qr3 = q3 + y * W;
#pragma omp simd
                for (std::size_t xcol = 0; xcol < W; ++xcol) {
                    orow0[2 * xcol] = qr0[xcol];
                    orow0[2 * xcol + 1] = qr1[xcol];
                    orow1[2 * xcol] = qr2[xcol];
                    orow1[2 * xcol + 1] = qr3[xcol];
                }
            }
        }
    }

    Tensor result(out);
    if (rg) {
        auto xn = x.ptr(), kn = kernel.ptr();
        out->parents = {xn, kn};
        out->backward_fn = [xn, kn, B, IC, OC, H, W](TensorNode& self) {
            // kernel (IC,OC,2,2) is already row-major (IC x 4OC), so both
            // grads are direct GEMMs against the de-interleaved quad grad
            const std::size_t HW = H * W;
            const double* gd = self.grad.data();
            const double* kd2 = kn->data.data();
            const double* xd2 = xn->data.data();
            double* gquad = detail::scratch(0, 4 * OC * HW);
            for (std::size_t b = 0; b < B; ++b) {
                for (std::size_t oc = 0; oc < OC; ++oc) {
                    double* __restrict__ q0 = gquad + (oc * 4 + 0) * HW;
                    double* __restrict__ q1 = gquad + (oc * 4 + 1) * HW;
                    double* __restrict__ q2 = gquad + (oc * 4 + 2) * HW;
                    double* __restrict__ q3 = gquad + (oc * 4 + 3) * HW;
                    const double* gplane = gd + (b * OC + oc) * 4 * HW;
                    for (std::size_t y = 0; y < H; ++y) {
                        const double* grow0 = gplane + (2 * y) * 2 * W;
                        const double* grow1 = grow0 + 2 * W;
                        double* qr0 = q0 + y * W;
                        double* qr1 = q1 + y * W;
                        double* qr2 = q2 + y * W;
                        double* qr3 = q3 + y * W;
#pragma omp simd
                        for (std::size_t xcol = 0; xcol < W; ++xcol) {
                            qr0[xcol] = grow0[2 * xcol];
                            qr1[xcol] = grow0[2 * xcol + 1];
                            qr2[xcol] = grow1[2 * xcol];
                            qr3[xcol] = grow1[2 * xcol + 1];
                        }
                    }
                }
                if (xn->requires_grad)
                    detail::gemm_nn_acc(static_cast<long>(IC), static_cast<long>(HW),
                                static_cast<long>(4 * OC), kd2, gquad,
                                xn->grad.data() + b * IC * HW);
                if (kn->requires_grad)
                    detail::gemm_nt(static_cast<long>(IC), static_cast<long>(4 * OC),
                            static_cast<long>(HW), xd2 + b * IC * HW, gquad,
                            kn->grad.data());
            }
        };
    }
    return result;
}

// ---------------------------------------------------------------------------
// batch normalization
// ---------------------------------------------------------------------------

struct BatchNormState {
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    explicit BatchNormState(std::size_t channels = 0)
        : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

enum class BnMode { train, eval };

inline Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta_p,
                        BatchNormState& state, BnMode mode) {
    const auto& xs = x.shape();
    if (xs.size() != 4) throw ShapeError("batchnorm: input must be (B,C,H,W)");
    const std::size_t B = xs[0], C = xs[1], H = xs[2], W = xs[3];
    if (gamma.shape() != std::vector<std::size_t>{C} ||
        beta_p.shape() != std::vector<std::size_t>{C})
        throw ShapeError("batchnorm: gamma/beta must be (C)");
    if (state.running_mean.size() != C)
        throw ShapeError("batchnorm: state channel count mismatch");

    const std::size_t plane = H * W, n_per_c = B * plane;
    const bool rg = detail::grad_enabled &&
                    (x.requires_grad() || gamma.requires_grad() || beta_p.requires_grad());
    auto out = detail::make_node({B, C, H, W}, rg);

    const double* xd = x.data().data();
    const double* gm = gamma.data().data();
    const double* bt = beta_p.data().data();
    double* od = out->data.data();

    std::vector<double> mean(C, 0.0), inv_std(C, 0.0);
    if (mode == BnMode::train) {
        for (std::size_t c = 0; c < C; ++c) {
            double s = 0.0, sq = 0.0;
            for (std::size_t b = 0; b < B; ++b) {
                const double* p = xd + (b * C + c) * plane;
#pragma omp simd reduction(+ : s, sq)
                for (std::size_t i = 0; i < plane; ++i) {
                    s += p[i];
                    sq += p[i] * p[i];
                }
            }
            mean[c] = s / static_cast<double>(n_per_c);
            const double var = std::max(
                0.0, sq / static_cast<double>(n_per_c) - mean[c] * mean[c]);
            inv_std[c] = 1.0 / std::sqrt(var + state.eps);
            state.running_mean[c] =
                (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mean[c];
            state.running_var[c] =
                (1.0 - state.momentum) * state.running_var[c] + state.momentum * var;
        }
    } else {
        for (std::size_t c = 0; c < C; ++c) {
            mean[c] = state.running_mean[c];
            inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + state.eps);
        }
    }

    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
            const double* __restrict__ p = xd + (b * C + c) * plane;
            double* __restrict__ o = od + (b * C + c) * plane;
            const double m = mean[c], is = inv_std[c], g = gm[c], bb = bt[c];
#pragma omp simd
            for (std::size_t i = 0; i < plane; ++i)
                o[i] = g * ((p[i] - m) * is) + bb;
        }

    Tensor result(out);
    if (rg) {
        auto xn = x.ptr(), gn = gamma.ptr(), bn2 = beta_p.ptr();
        const bool batch_stats = mode == BnMode::train;
        out->parents = {xn, gn, bn2};
        // the normalized value is recovered from the output as (y-beta)/gamma
        // instead of keeping a buffer of it alive per call
        out->backward_fn = [xn, gn, bn2, B, C, plane, n_per_c, batch_stats,
                            inv_std = std::move(inv_std)](TensorNode& self) {
            const double* gd = self.grad.data();
            const double* yd = self.data.data();
            const double* gmv = gn->data.data();
            const double* btv = bn2->data.data();
            for (std::size_t c = 0; c < C; ++c) {
                const double g = gmv[c], bb = btv[c];
                const double ginv = g != 0.0 ? 1.0 / g : 0.0;
                double sum_g = 0.0, sum_gh = 0.0;
                for (std::size_t b = 0; b < B; ++b) {
                    const std::size_t base = (b * C + c) * plane;
                    const double* __restrict__ gr = gd + base;
                    const double* __restrict__ yr = yd + base;
#pragma omp simd reduction(+ : sum_g, sum_gh)
                    for (std::size_t i = 0; i < plane; ++i) {
                        sum_g += gr[i];
                        sum_gh += gr[i] * ((yr[i] - bb) * ginv);
                    }
                }
                if (bn2->requires_grad) bn2->grad[c] += sum_g;
                if (gn->requires_grad) gn->grad[c] += sum_gh;
                if (xn->requires_grad) {
                    const double is = inv_std[c];
                    const double mg = sum_g / static_cast<double>(n_per_c);
                    const double mgh = sum_gh / static_cast<double>(n_per_c);
                    for (std::size_t b = 0; b < B; ++b) {
                        const std::size_t base = (b * C + c) * plane;
                        const double* __restrict__ gr = gd + base;
                        const double* __restrict__ yr = yd + base;
                        double* __restrict__ gx = xn->grad.data() + base;
                        if (batch_stats) {
#pragma omp simd
                            for (std::size_t i = 0; i < plane; ++i)
                                gx[i] += g * is *
                                         (gr[i] - mg - (yr[i] - bb) * ginv * mgh);
                        } else {
#pragma omp simd
                            for (std::size_t i = 0; i < plane; ++i)
                                gx[i] += g * is * gr[i];
                        }
                    }
                }
            }
        };
    }
    return result;
}

// ---------------------------------------------------------------------------
// elementwise and structural ops
// ---------------------------------------------------------------------------

inline Tensor relu(const Tensor& x) {
    const bool rg = detail::grad_enabled && x.requires_grad();
    auto out = detail::make_node(x.shape(), rg);
    const auto& xd = x.data();
    for (std::size_t i = 0; i < xd.size(); ++i)
        out->data[i] = xd[i] > 0.0 ? xd[i] : 0.0;
    Tensor result(out);
    if (rg) {
        auto xn = x.ptr();
        out->parents = {xn};
        out->backward_fn = [xn](TensorNode& self) {
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                if (xn->data[i] > 0.0) xn->grad[i] += self.grad[i];
        };
    }
    return result;
}

inline Tensor sigmoid(const Tensor& x) {
    const bool rg = detail::grad_enabled && x.requires_grad();
    auto out = detail::make_node(x.shape(), rg);
    const auto& xd = x.data();
    for (std::size_t i = 0; i < xd.size(); ++i)
        out->data[i] = 1.0 / (1.0 + std::exp(-xd[i]));
    Tensor result(out);
    if (rg) {
        auto xn = x.ptr();
        out->parents = {xn};
        out->backward_fn = [xn](TensorNode& self) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const double s = self.data[i];
                xn->grad[i] += self.grad[i] * s * (1.0 - s);
            }
        };
    }
    return result;
}

inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
    const auto& as = a.shape();
    const auto& bs = b.shape();
    if (as.size() != 4 || bs.size() != 4 || as[0] != bs[0] || as[2] != bs[2] ||
        as[3] != bs[3])
        throw ShapeError("concat_channels: batch/spatial dims differ");

    const std::size_t B = as[0], CA = as[1], CB = bs[1], plane = as[2] * as[3];
    const bool rg = detail::grad_enabled && (a.requires_grad() || b.requires_grad());
    auto out = detail::make_node({B, CA + CB, as[2], as[3]}, rg);
    for (std::size_t batch = 0; batch < B; ++batch) {
        std::copy(a.data().begin() + batch * CA * plane,
                  a.data().begin() + (batch + 1) * CA * plane,
                  out->data.begin() + batch * (CA + CB) * plane);
        std::copy(b.data().begin() + batch * CB * plane,
                  b.data().begin() + (batch + 1) * CB * plane,
                  out->data.begin() + (batch * (CA + CB) + CA) * plane);
    }
    Tensor result(out);
    if (rg) {
        auto an = a.ptr(), bn = b.ptr();
        out->parents = {an, bn};
        out->backward_fn = [an, bn, B, CA, CB, plane](TensorNode& self) {
            for (std::size_t batch = 0; batch < B; ++batch) {
                const double* g = self.grad.data() + batch * (CA + CB) * plane;
                if (an->requires_grad) {
                    double* ga = an->grad.data() + batch * CA * plane;
                    for (std::size_t i = 0; i < CA * plane; ++i) ga[i] += g[i];
                }
                if (bn->requires_grad) {
                    double* gb = bn->grad.data() + batch * CB * plane;
                    for (std::size_t i = 0; i < CB * plane; ++i)
                        gb[i] += g[CA * plane + i];
                }
            }
        };
    }
    return result;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw ShapeError("add: shapes differ");
    const bool rg = detail::grad_enabled && (a.requires_grad() || b.requires_grad());
    auto out = detail::make_node(a.shape(), rg);
    for (std::size_t i = 0; i < out->data.size(); ++i)
        out->data[i] = a.data()[i] + b.data()[i];
    Tensor result(out);
    if (rg) {
        auto an = a.ptr(), bn = b.ptr();
        out->parents = {an, bn};
        out->backward_fn = [an, bn](TensorNode& self) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                if (an->requires_grad) an->grad[i] += self.grad[i];
                if (bn->requires_grad) bn->grad[i] += self.grad[i];
            }
        };
    }
    return result;
}

inline Tensor scale(const Tensor& x, double factor) {
    const bool rg = detail::grad_enabled && x.requires_grad();
    auto out = detail::make_node(x.shape(), rg);
    for (std::size_t i = 0; i < out->data.size(); ++i)
        out->data[i] = factor * x.data()[i];
    Tensor result(out);
    if (rg) {
        auto xn = x.ptr();
        out->parents = {xn};
        out->backward_fn = [xn, factor](TensorNode& self) {
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                xn->grad[i] += factor * self.grad[i];
        };
    }
    return result;
}

inline Tensor sum_squares(const Tensor& x) {
    const bool rg = detail::grad_enabled && x.requires_grad();
    auto out = detail::make_node({1}, rg);
    double s = 0.0;
    for (double v : x.data()) s += v * v;
    out->data[0] = s;
    Tensor result(out);
    if (rg) {
        auto xn = x.ptr();
        out->parents = {xn};
        out->backward_fn = [xn](TensorNode& self) {
            for (std::size_t i = 0; i < xn->data.size(); ++i)
                xn->grad[i] += self.grad[0] * 2.0 * xn->data[i];
        };
    }
    return result;
}

// Weighted binary cross entropy against fixed labels; predictions are
// clamped into [1e-7, 1-1e-7] inside the logs (gradient zero where the
// clamp binds).  Normalizer: number of strictly positive weights when
// normalize_by_support, else total element count; floored at one.
inline Tensor weighted_bce(const Tensor& pred, const std::vector<double>& target,
                           const std::vector<double>& weight,
                           bool normalize_by_support = true) {
    if (target.size() != pred.numel() || weight.size() != pred.numel())
        throw ShapeError("weighted_bce: target/weight length mismatch");
    constexpr double lo = 1e-7, hi = 1.0 - 1e-7;

    double m = 0.0;
    if (normalize_by_support) {
        for (double w : weight)
            if (w > 0.0) m += 1.0;
    } else {
        m = static_cast<double>(pred.numel());
    }
    if (m < 1.0) m = 1.0;

    const bool rg = detail::grad_enabled && pred.requires_grad();
    auto out = detail::make_node({1}, rg);
    double loss = 0.0;
    const auto& pd = pred.data();
    for (std::size_t i = 0; i < pd.size(); ++i) {
        const double d = std::min(hi, std::max(lo, pd[i]));
        loss -= weight[i] * (target[i] * std::log(d) +
                             (1.0 - target[i]) * std::log(1.0 - d));
    }
    out->data[0] = loss / m;

    Tensor result(out);
    if (rg) {
        auto pn = pred.ptr();
        out->parents = {pn};
        out->backward_fn = [pn, target, weight, m](TensorNode& self) {
            const double g0 = self.grad[0] / m;
            for (std::size_t i = 0; i < pn->data.size(); ++i) {
                const double p = pn->data[i];
                if (p < lo || p > hi) continue;
                pn->grad[i] += g0 * weight[i] * (-target[i] / p +
                                                 (1.0 - target[i]) / (1.0 - p));
            }
        };
    }
    return result;
}

// ---------------------------------------------------------------------------
// initialization
// ---------------------------------------------------------------------------

inline Tensor xavier_init(const std::vector<std::size_t>& shape, Rng& rng) {
    if (shape.empty()) throw ArgumentError("xavier_init: empty shape");
    double fan_in, fan_out;
    if (shape.size() == 1) {
        fan_in = fan_out = static_cast<double>(shape[0]);
    } else {
        double receptive = 1.0;
        for (std::size_t i = 2; i < shape.size(); ++i)
            receptive *= static_cast<double>(shape[i]);
        fan_in = static_cast<double>(shape[1]) * receptive;
        fan_out = static_cast<double>(shape[0]) * receptive;
    }
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    Tensor t = Tensor::zeros(shape, true);
    for (double& v : t.data()) v = rng.uniform(-bound, bound);
    return t;
}

} // namespace usta
