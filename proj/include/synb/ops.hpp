#pragma once

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "synb/autograd.hpp"
#include "synb/tensor.hpp"

namespace synb {

inline void gemm(bool ta, bool tb, int m, int n, int k, float alpha, const float* a, int lda,
                 const float* b, int ldb, float beta, float* c, int ldc) {
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n,
                k, alpha, a, lda, b, ldb, beta, c, ldc);
}
inline void gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double* a, int lda,
                 const double* b, int ldb, double beta, double* c, int ldc) {
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n,
                k, alpha, a, lda, b, ldb, beta, c, ldc);
}

namespace detail {

template <typename T>
bool wants(Node<T>& n, std::size_t i) {
    return n.parents[i]->requires_grad;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T, typename FwdF, typename BwdF>
Var<T> unary_op(const Var<T>& x, FwdF f, BwdF df) {
    Tensor<T> out(x.shape());
    const long n = out.size();
    for (long i = 0; i < n; ++i) out.at(i) = f(x.val().at(i));
    return Var<T>(make_node<T>(std::move(out), {x}, [df](Node<T>& nd) {
        if (!detail::wants(nd, 0)) return;
        auto& p = *nd.parents[0];
        const long n = nd.value.size();
        for (long i = 0; i < n; ++i) p.grad.at(i) += nd.grad.at(i) * df(p.value.at(i), nd.value.at(i));
    }));
}

template <typename T>
Var<T> relu(const Var<T>& x) {
    return unary_op(
        x, [](T v) { return v > T(0) ? v : T(0); },
        [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
    return unary_op(
        x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> exp_(const Var<T>& x) {
    return unary_op(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log_(const Var<T>& x) {
    return unary_op(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Var<T> sqrt_(const Var<T>& x) {
    return unary_op(x, [](T v) { return std::sqrt(v); },
                    [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Var<T> square(const Var<T>& x) {
    return unary_op(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Var<T> sin_(const Var<T>& x) {
    return unary_op(x, [](T v) { return std::sin(v); }, [](T v, T) { return std::cos(v); });
}

template <typename T>
Var<T> cos_(const Var<T>& x) {
    return unary_op(x, [](T v) { return std::cos(v); }, [](T v, T) { return -std::sin(v); });
}

template <typename T>
Var<T> neg(const Var<T>& x) {
    return unary_op(x, [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <typename T>
Var<T> add_scalar(const Var<T>& x, T c) {
    return unary_op(x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> mul_scalar(const Var<T>& x, T c) {
    return unary_op(x, [c](T v) { return v * c; }, [c](T, T) { return c; });
}

inline double wrap_to_pi(double a) {
    double y = std::fmod(a + std::numbers::pi, 2.0 * std::numbers::pi);
    if (y <= 0) y += 2.0 * std::numbers::pi;
    return y - std::numbers::pi;
}

// Canonical phase range (-pi, pi]. Gradient 1 almost everywhere.
template <typename T>
Var<T> wrap_phase(const Var<T>& x) {
    return unary_op(x, [](T v) { return static_cast<T>(wrap_to_pi(static_cast<double>(v))); },
                    [](T, T) { return T(1); });
}

template <typename T, typename FwdF, typename BwdF>
Var<T> binary_op(const Var<T>& a, const Var<T>& b, FwdF f, BwdF backprop) {
    check(a.shape() == b.shape(), "binary op shape mismatch " + shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
    Tensor<T> out(a.shape());
    const long n = out.size();
    for (long i = 0; i < n; ++i) out.at(i) = f(a.val().at(i), b.val().at(i));
    return Var<T>(make_node<T>(std::move(out), {a, b}, std::move(backprop)));
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    return binary_op(
        a, b, [](T x, T y) { return x + y; },
        [](Node<T>& nd) {
            const long n = nd.value.size();
            for (int p = 0; p < 2; ++p) {
                if (!detail::wants(nd, static_cast<std::size_t>(p))) continue;
                auto& g = nd.parents[static_cast<std::size_t>(p)]->grad;
                for (long i = 0; i < n; ++i) g.at(i) += nd.grad.at(i);
            }
        });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    return binary_op(
        a, b, [](T x, T y) { return x - y; },
        [](Node<T>& nd) {
            const long n = nd.value.size();
            if (detail::wants(nd, 0))
                for (long i = 0; i < n; ++i) nd.parents[0]->grad.at(i) += nd.grad.at(i);
            if (detail::wants(nd, 1))
                for (long i = 0; i < n; ++i) nd.parents[1]->grad.at(i) -= nd.grad.at(i);
        });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    return binary_op(
        a, b, [](T x, T y) { return x * y; },
        [](Node<T>& nd) {
            const long n = nd.value.size();
            if (detail::wants(nd, 0))
                for (long i = 0; i < n; ++i)
                    nd.parents[0]->grad.at(i) += nd.grad.at(i) * nd.parents[1]->value.at(i);
            if (detail::wants(nd, 1))
                for (long i = 0; i < n; ++i)
                    nd.parents[1]->grad.at(i) += nd.grad.at(i) * nd.parents[0]->value.at(i);
        });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
    return binary_op(
        a, b, [](T x, T y) { return x / y; },
        [](Node<T>& nd) {
            const long n = nd.value.size();
            for (long i = 0; i < n; ++i) {
                const T y = nd.parents[1]->value.at(i);
                if (detail::wants(nd, 0)) nd.parents[0]->grad.at(i) += nd.grad.at(i) / y;
                if (detail::wants(nd, 1))
                    nd.parents[1]->grad.at(i) -= nd.grad.at(i) * nd.value.at(i) / y;
            }
        });
}

// atan2(y, x) elementwise; denominator floored for exact zeros.
template <typename T>
Var<T> atan2_(const Var<T>& y, const Var<T>& x) {
    return binary_op(
        y, x, [](T yy, T xx) { return (yy == T(0) && xx == T(0)) ? T(0) : std::atan2(yy, xx); },
        [](Node<T>& nd) {
            const long n = nd.value.size();
            for (long i = 0; i < n; ++i) {
                const T yy = nd.parents[0]->value.at(i);
                const T xx = nd.parents[1]->value.at(i);
                const T den = yy * yy + xx * xx + T(1e-12);
                if (detail::wants(nd, 0)) nd.parents[0]->grad.at(i) += nd.grad.at(i) * xx / den;
                if (detail::wants(nd, 1)) nd.parents[1]->grad.at(i) -= nd.grad.at(i) * yy / den;
            }
        });
}

// sqrt(re^2 + im^2 + eps), eps = 1e-12 keeps the gradient defined at 0.
template <typename T>
Var<T> complex_magnitude(const Var<T>& re, const Var<T>& im) {
    return binary_op(
        re, im, [](T r, T i) { return std::sqrt(r * r + i * i + T(1e-12)); },
        [](Node<T>& nd) {
            const long n = nd.value.size();
            for (long i = 0; i < n; ++i) {
                const T m = nd.value.at(i);
                if (detail::wants(nd, 0))
                    nd.parents[0]->grad.at(i) += nd.grad.at(i) * nd.parents[0]->value.at(i) / m;
                if (detail::wants(nd, 1))
                    nd.parents[1]->grad.at(i) += nd.grad.at(i) * nd.parents[1]->value.at(i) / m;
            }
        });
}

// ---------------------------------------------------------------------------
// reductions / reshaping
// ---------------------------------------------------------------------------

template <typename T>
Var<T> sum_all(const Var<T>& x) {
    T s = 0;
    for (long i = 0; i < x.val().size(); ++i) s += x.val().at(i);
    return Var<T>(make_node<T>(Tensor<T>({1}, {s}), {x}, [](Node<T>& nd) {
        if (!detail::wants(nd, 0)) return;
        auto& g = nd.parents[0]->grad;
        const T go = nd.grad.at(0);
        for (long i = 0; i < g.size(); ++i) g.at(i) += go;
    }));
}

template <typename T>
Var<T> mean_all(const Var<T>& x) {
    const long n = x.val().size();
    return mul_scalar(sum_all(x), T(1) / static_cast<T>(n));
}

template <typename T>
Var<T> dot(const Var<T>& a, const Var<T>& b) {
    check(a.shape() == b.shape(), "dot shape mismatch");
    T s = 0;
    for (long i = 0; i < a.val().size(); ++i) s += a.val().at(i) * b.val().at(i);
    return Var<T>(make_node<T>(Tensor<T>({1}, {s}), {a, b}, [](Node<T>& nd) {
        const T go = nd.grad.at(0);
        const long n = nd.parents[0]->value.size();
        if (detail::wants(nd, 0))
            for (long i = 0; i < n; ++i)
                nd.parents[0]->grad.at(i) += go * nd.parents[1]->value.at(i);
        if (detail::wants(nd, 1))
            for (long i = 0; i < n; ++i)
                nd.parents[1]->grad.at(i) += go * nd.parents[0]->value.at(i);
    }));
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape s) {
    check(numel(s) == numel(x.shape()), "reshape numel mismatch");
    Tensor<T> out(std::move(s), x.val().v);
    return Var<T>(make_node<T>(std::move(out), {x}, [](Node<T>& nd) {
        if (!detail::wants(nd, 0)) return;
        auto& g = nd.parents[0]->grad;
        for (long i = 0; i < g.size(); ++i) g.at(i) += nd.grad.at(i);
    }));
}

// out.flat[i] = x.flat[indices[i]]; backward scatter-adds. Carrier for patch
// grids and row gathers.
template <typename T>
Var<T> index_select_flat(const Var<T>& x, std::vector<long> indices, Shape out_shape) {
    check(numel(out_shape) == static_cast<long>(indices.size()), "index_select shape mismatch");
    Tensor<T> out(std::move(out_shape));
    for (std::size_t i = 0; i < indices.size(); ++i) out.v[i] = x.val().at(indices[i]);
    return Var<T>(make_node<T>(std::move(out), {x}, [idx = std::move(indices)](Node<T>& nd) {
        if (!detail::wants(nd, 0)) return;
        auto& g = nd.parents[0]->grad;
        for (std::size_t i = 0; i < idx.size(); ++i) g.at(idx[i]) += nd.grad.v[i];
    }));
}

// Rows of a [R, D] matrix.
template <typename T>
Var<T> gather_rows(const Var<T>& x, const std::vector<int>& rows) {
    check(x.shape().size() == 2, "gather_rows wants a matrix");
    const long d = x.shape()[1];
    std::vector<long> idx;
    idx.reserve(rows.size() * static_cast<std::size_t>(d));
    for (int r : rows)
        for (long j = 0; j < d; ++j) idx.push_back(static_cast<long>(r) * d + j);
    return index_select_flat(x, std::move(idx), {static_cast<int>(rows.size()), static_cast<int>(d)});
}

template <typename T>
Var<T> stack_scalars(const std::vector<Var<T>>& xs) {
    Tensor<T> out({static_cast<int>(xs.size())});
    for (std::size_t i = 0; i < xs.size(); ++i) {
        check(numel(xs[i].shape()) == 1, "stack_scalars wants scalars");
        out.v[i] = xs[i].val().at(0);
    }
    return Var<T>(make_node<T>(std::move(out), xs, [](Node<T>& nd) {
        for (std::size_t i = 0; i < nd.parents.size(); ++i)
            if (detail::wants(nd, i)) nd.parents[i]->grad.at(0) += nd.grad.v[i];
    }));
}

// Overflow-safe over a 1-D vector; returns a scalar.
template <typename T>
Var<T> logsumexp(const Var<T>& x) {
    const long n = x.val().size();
    T mx = x.val().at(0);
    for (long i = 1; i < n; ++i) mx = std::max(mx, x.val().at(i));
    T s = 0;
    for (long i = 0; i < n; ++i) s += std::exp(x.val().at(i) - mx);
    const T lse = mx + std::log(s);
    return Var<T>(make_node<T>(Tensor<T>({1}, {lse}), {x}, [](Node<T>& nd) {
        if (!detail::wants(nd, 0)) return;
        const T go = nd.grad.at(0);
        const T lse = nd.value.at(0);
        auto& p = *nd.parents[0];
        for (long i = 0; i < p.value.size(); ++i)
            p.grad.at(i) += go * std::exp(p.value.at(i) - lse);
    }));
}

// d(x, y) = 1 - <x,y> / (max(|x|,eps) * max(|y|,eps)), eps = 1e-8.
template <typename T>
Var<T> cosine_distance(const Var<T>& a, const Var<T>& b) {
    check(a.shape() == b.shape(), "cosine_distance shape mismatch");
    const long n = a.val().size();
    double dot = 0, na2 = 0, nb2 = 0;
    for (long i = 0; i < n; ++i) {
        dot += static_cast<double>(a.val().at(i)) * b.val().at(i);
        na2 += static_cast<double>(a.val().at(i)) * a.val().at(i);
        nb2 += static_cast<double>(b.val().at(i)) * b.val().at(i);
    }
    const double eps = 1e-8;
    const double na = std::max(std::sqrt(na2), eps);
    const double nb = std::max(std::sqrt(nb2), eps);
    const double sim = dot / (na * nb);
    const T d = static_cast<T>(1.0 - sim);
    return Var<T>(make_node<T>(
        Tensor<T>({1}, {d}), {a, b}, [na, nb, sim, floored_a = na2 < eps * eps, floored_b = nb2 < eps * eps](Node<T>& nd) {
            const double go = static_cast<double>(nd.grad.at(0));
            auto& pa = *nd.parents[0];
            auto& pb = *nd.parents[1];
            const long n = pa.value.size();
            // d(d)/da = -(b/(na*nb) - sim*a/na^2)
            for (long i = 0; i < n; ++i) {
                const double av = pa.value.at(i), bv = pb.value.at(i);
                if (detail::wants(nd, 0)) {
                    double t = bv / (na * nb);
                    if (!floored_a) t -= sim * av / (na * na);
                    pa.grad.at(i) -= static_cast<T>(go * t);
                }
                if (detail::wants(nd, 1)) {
                    double t = av / (na * nb);
                    if (!floored_b) t -= sim * bv / (nb * nb);
                    pb.grad.at(i) -= static_cast<T>(go * t);
                }
            }
        }));
}

// Non-differentiable flavor used by the mining step.
template <typename T>
double cosine_distance_value(const T* a, const T* b, long n) {
    double dot = 0, na2 = 0, nb2 = 0;
    for (long i = 0; i < n; ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na2 += static_cast<double>(a[i]) * a[i];
        nb2 += static_cast<double>(b[i]) * b[i];
    }
    const double eps = 1e-8;
    return 1.0 - dot / (std::max(std::sqrt(na2), eps) * std::max(std::sqrt(nb2), eps));
}

// ---------------------------------------------------------------------------
// nn primitives
// ---------------------------------------------------------------------------

// x: [N, D_in], w: [D_out, D_in] -> [N, D_out]. Biases live in the complex
// layer, not here.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w) {
    check(x.shape().size() == 2 && w.shape().size() == 2, "linear wants matrices");
    check(x.shape()[1] == w.shape()[1], "linear dim mismatch");
    const int n = x.shape()[0], din = x.shape()[1], dout = w.shape()[0];
    Tensor<T> out({n, dout});
    gemm(false, true, n, dout, din, T(1), x.val().data(), din, w.val().data(), din, T(0),
         out.data(), dout);
    return Var<T>(make_node<T>(std::move(out), {x, w}, [n, din, dout](Node<T>& nd) {
        if (detail::wants(nd, 0))
            gemm(false, false, n, din, dout, T(1), nd.grad.data(), dout,
                 nd.parents[1]->value.data(), din, T(1), nd.parents[0]->grad.data(), din);
        if (detail::wants(nd, 1))
            gemm(true, false, dout, din, n, T(1), nd.grad.data(), dout,
                 nd.parents[0]->value.data(), din, T(1), nd.parents[1]->grad.data(), din);
    }));
}

// Broadcast a per-channel bias over [N, C] or [N, C, H, W].
template <typename T>
Var<T> add_channel_bias(const Var<T>& x, const Var<T>& bias) {
    check(x.shape().size() >= 2, "add_channel_bias wants [N,C,...]");
    const int c = x.shape()[1];
    check(bias.shape() == Shape{c}, "bias shape mismatch");
    long spatial = 1;
    for (std::size_t i = 2; i < x.shape().size(); ++i) spatial *= x.shape()[i];
    const int n = x.shape()[0];
    Tensor<T> out(x.shape());
    for (long i = 0; i < out.size(); ++i) {
        const int ch = static_cast<int>((i / spatial) % c);
        out.at(i) = x.val().at(i) + bias.val().at(ch);
    }
    (void)n;
    return Var<T>(make_node<T>(std::move(out), {x, bias}, [c, spatial](Node<T>& nd) {
        const long n = nd.value.size();
        if (detail::wants(nd, 0))
            for (long i = 0; i < n; ++i) nd.parents[0]->grad.at(i) += nd.grad.at(i);
        if (detail::wants(nd, 1))
            for (long i = 0; i < n; ++i)
                nd.parents[1]->grad.at(static_cast<int>((i / spatial) % c)) += nd.grad.at(i);
    }));
}

namespace detail {

// col: [C*k*k, OH*OW]
template <typename T>
void im2col(const T* img, int c, int h, int w, int k, int stride, int pad, int oh, int ow, T* col) {
    for (int ch = 0; ch < c; ++ch)
        for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
                T* dst = col + ((static_cast<long>(ch) * k + ki) * k + kj) * (static_cast<long>(oh) * ow);
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + ki;
                    if (iy < 0 || iy >= h) {
                        for (int ox = 0; ox < ow; ++ox) *dst++ = T(0);
                        continue;
                    }
                    const T* src = img + (static_cast<long>(ch) * h + iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + kj;
                        *dst++ = (ix >= 0 && ix < w) ? src[ix] : T(0);
                    }
                }
            }
}

template <typename T>
void col2im_add(const T* col, int c, int h, int w, int k, int stride, int pad, int oh, int ow,
                T* img) {
    for (int ch = 0; ch < c; ++ch)
        for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
                const T* src = col + ((static_cast<long>(ch) * k + ki) * k + kj) * (static_cast<long>(oh) * ow);
                for (int oy = 0; oy < oh; ++oy, src += ow) {
                    const int iy = oy * stride - pad + ki;
                    if (iy < 0 || iy >= h) continue;
                    T* dst = img + (static_cast<long>(ch) * h + iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + kj;
                        if (ix >= 0 && ix < w) dst[ix] += src[ox];
                    }
                }
            }
}

}  // namespace detail

// x: [N,C,H,W], kernel: [O,C,k,k] -> [N,O,H',W'] with H' = (H+2p-k)/s + 1.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& kernel, int stride, int pad) {
    check(x.shape().size() == 4 && kernel.shape().size() == 4, "conv2d wants 4-D tensors");
    check(stride > 0, "conv2d stride must be positive");
    const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    const int o = kernel.shape()[0], kc = kernel.shape()[1], k = kernel.shape()[2];
    check(kc == c, "conv2d channel mismatch");
    check(kernel.shape()[3] == k, "conv2d kernel must be square");
    const int oh = (h + 2 * pad - k) / stride + 1;
    const int ow = (w + 2 * pad - k) / stride + 1;
    check(oh > 0 && ow > 0, "conv2d output would be empty");

    const long ckk = static_cast<long>(c) * k * k;
    const long osp = static_cast<long>(oh) * ow;
    Tensor<T> out({n, o, oh, ow});
    std::vector<T> col(static_cast<std::size_t>(ckk * osp));
    for (int b = 0; b < n; ++b) {
        detail::im2col(x.val().data() + static_cast<long>(b) * c * h * w, c, h, w, k, stride, pad,
                       oh, ow, col.data());
        gemm(false, false, o, static_cast<int>(osp), static_cast<int>(ckk), T(1),
             kernel.val().data(), static_cast<int>(ckk), col.data(), static_cast<int>(osp), T(0),
             out.data() + static_cast<long>(b) * o * osp, static_cast<int>(osp));
    }
    return Var<T>(make_node<T>(
        std::move(out), {x, kernel}, [n, c, h, w, o, k, stride, pad, oh, ow](Node<T>& nd) {
            const long ckk = static_cast<long>(c) * k * k;
            const long osp = static_cast<long>(oh) * ow;
            std::vector<T> col(static_cast<std::size_t>(ckk * osp));
            auto& px = *nd.parents[0];
            auto& pk = *nd.parents[1];
            for (int b = 0; b < n; ++b) {
                const T* gout = nd.grad.data() + static_cast<long>(b) * o * osp;
                if (detail::wants(nd, 1)) {
                    detail::im2col(px.value.data() + static_cast<long>(b) * c * h * w, c, h, w, k,
                                   stride, pad, oh, ow, col.data());
                    gemm(false, true, o, static_cast<int>(ckk), static_cast<int>(osp), T(1), gout,
                         static_cast<int>(osp), col.data(), static_cast<int>(osp), T(1),
                         pk.grad.data(), static_cast<int>(ckk));
                }
                if (detail::wants(nd, 0)) {
                    gemm(true, false, static_cast<int>(ckk), static_cast<int>(osp), o, T(1),
                         pk.value.data(), static_cast<int>(ckk), gout, static_cast<int>(osp), T(0),
                         col.data(), static_cast<int>(osp));
                    detail::col2im_add(col.data(), c, h, w, k, stride, pad, oh, ow,
                                       px.grad.data() + static_cast<long>(b) * c * h * w);
                }
            }
        }));
}

// x: [N,Ci,H,W], kernel: [Ci,Co,k,k] -> [N,Co,H'',W''] with
// H'' = (H-1)*s - 2p + k + out_pad. out_pad = s-1 makes stride-2 double the
// spatial size exactly; the map is the adjoint of the matching conv2d.
template <typename T>
Var<T> conv2d_transpose(const Var<T>& x, const Var<T>& kernel, int stride, int pad,
                        int out_pad = -1) {
    check(x.shape().size() == 4 && kernel.shape().size() == 4, "conv2d_transpose wants 4-D");
    check(stride > 0, "conv2d_transpose stride must be positive");
    if (out_pad < 0) out_pad = stride - 1;
    const int n = x.shape()[0], ci = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    check(kernel.shape()[0] == ci, "conv2d_transpose channel mismatch");
    const int co = kernel.shape()[1], k = kernel.shape()[2];
    const int oh = (h - 1) * stride - 2 * pad + k + out_pad;
    const int ow = (w - 1) * stride - 2 * pad + k + out_pad;
    check(oh > 0 && ow > 0, "conv2d_transpose output would be empty");

    // Forward is the input-backward of a conv2d(out -> x) with kernel viewed
    // as [Ci, Co*k*k].
    const long ckk = static_cast<long>(co) * k * k;
    const long isp = static_cast<long>(h) * w;
    Tensor<T> out({n, co, oh, ow});
    std::vector<T> col(static_cast<std::size_t>(ckk * isp));
    for (int b = 0; b < n; ++b) {
        gemm(true, false, static_cast<int>(ckk), static_cast<int>(isp), ci, T(1),
             kernel.val().data(), static_cast<int>(ckk), x.val().data() + static_cast<long>(b) * ci * isp,
             static_cast<int>(isp), T(0), col.data(), static_cast<int>(isp));
        detail::col2im_add(col.data(), co, oh, ow, k, stride, pad, h, w,
                           out.data() + static_cast<long>(b) * co * oh * ow);
    }
    return Var<T>(make_node<T>(
        std::move(out), {x, kernel}, [n, ci, h, w, co, k, stride, pad, oh, ow](Node<T>& nd) {
            const long ckk = static_cast<long>(co) * k * k;
            const long isp = static_cast<long>(h) * w;
            std::vector<T> col(static_cast<std::size_t>(ckk * isp));
            auto& px = *nd.parents[0];
            auto& pk = *nd.parents[1];
            for (int b = 0; b < n; ++b) {
                detail::im2col(nd.grad.data() + static_cast<long>(b) * co * oh * ow, co, oh, ow, k,
                               stride, pad, h, w, col.data());
                if (detail::wants(nd, 0))
                    gemm(false, false, ci, static_cast<int>(isp), static_cast<int>(ckk), T(1),
                         pk.value.data(), static_cast<int>(ckk), col.data(), static_cast<int>(isp),
                         T(1), px.grad.data() + static_cast<long>(b) * ci * isp,
                         static_cast<int>(isp));
                if (detail::wants(nd, 1))
                    gemm(false, true, ci, static_cast<int>(ckk), static_cast<int>(isp), T(1),
                         px.value.data() + static_cast<long>(b) * ci * isp, static_cast<int>(isp),
                         col.data(), static_cast<int>(isp), T(1), pk.grad.data(),
                         static_cast<int>(ckk));
            }
        }));
}

// x2 bilinear upsample, align-corners=false (constants map to constants).
template <typename T>
Var<T> upsample_bilinear_x2(const Var<T>& x) {
    check(x.shape().size() == 4, "upsample wants [N,C,H,W]");
    const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    const int oh = 2 * h, ow = 2 * w;

    // Per-axis source index pair + weight, shared by forward and backward.
    auto axis_map = [](int in, int out) {
        std::vector<int> i0(out), i1(out);
        std::vector<double> w1(out);
        for (int o = 0; o < out; ++o) {
            double src = (o + 0.5) / 2.0 - 0.5;
            src = std::max(0.0, std::min(src, static_cast<double>(in - 1)));
            i0[o] = static_cast<int>(std::floor(src));
            i1[o] = std::min(i0[o] + 1, in - 1);
            w1[o] = src - i0[o];
        }
        return std::make_tuple(i0, i1, w1);
    };
    auto [y0, y1, wy] = axis_map(h, oh);
    auto [x0, x1, wx] = axis_map(w, ow);

    Tensor<T> out({n, c, oh, ow});
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch) {
            const T* src = x.val().data() + (static_cast<long>(b) * c + ch) * h * w;
            T* dst = out.data() + (static_cast<long>(b) * c + ch) * oh * ow;
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    const double a = wy[oy], bw = wx[ox];
                    const double v = (1 - a) * (1 - bw) * src[y0[oy] * w + x0[ox]] +
                                     (1 - a) * bw * src[y0[oy] * w + x1[ox]] +
                                     a * (1 - bw) * src[y1[oy] * w + x0[ox]] +
                                     a * bw * src[y1[oy] * w + x1[ox]];
                    dst[static_cast<long>(oy) * ow + ox] = static_cast<T>(v);
                }
        }
    return Var<T>(make_node<T>(std::move(out), {x},
                               [n, c, h, w, oh, ow, y0 = y0, y1 = y1, wy = wy, x0 = x0, x1 = x1,
                                wx = wx](Node<T>& nd) {
                                   if (!detail::wants(nd, 0)) return;
                                   auto& p = *nd.parents[0];
                                   for (int b = 0; b < n; ++b)
                                       for (int ch = 0; ch < c; ++ch) {
                                           T* gsrc = p.grad.data() + (static_cast<long>(b) * c + ch) * h * w;
                                           const T* gdst = nd.grad.data() + (static_cast<long>(b) * c + ch) * oh * ow;
                                           for (int oy = 0; oy < oh; ++oy)
                                               for (int ox = 0; ox < ow; ++ox) {
                                                   const double a = wy[oy], bw = wx[ox];
                                                   const T g = gdst[static_cast<long>(oy) * ow + ox];
                                                   gsrc[y0[oy] * w + x0[ox]] += static_cast<T>((1 - a) * (1 - bw) * g);
                                                   gsrc[y0[oy] * w + x1[ox]] += static_cast<T>((1 - a) * bw * g);
                                                   gsrc[y1[oy] * w + x0[ox]] += static_cast<T>(a * (1 - bw) * g);
                                                   gsrc[y1[oy] * w + x1[ox]] += static_cast<T>(a * bw * g);
                                               }
                                       }
                               }));
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

template <typename T>
struct BatchNormState {
    std::vector<T> running_mean;
    std::vector<T> running_var;
    T momentum = T(0.1);
    T eps = T(1e-5);

    explicit BatchNormState(int channels = 0)
        : running_mean(static_cast<std::size_t>(channels), T(0)),
          running_var(static_cast<std::size_t>(channels), T(1)) {}
};

// Per-channel over batch and spatial dims; [N,C] or [N,C,H,W]. Train mode
// normalizes with batch statistics and updates the running ones.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  BatchNormState<T>& state, bool train) {
    check(x.shape().size() >= 2, "batch_norm wants [N,C,...]");
    const int n = x.shape()[0], c = x.shape()[1];
    check(n > 0, "batch_norm: empty batch");
    long spatial = 1;
    for (std::size_t i = 2; i < x.shape().size(); ++i) spatial *= x.shape()[i];
    const long m = static_cast<long>(n) * spatial;
    check(static_cast<int>(state.running_mean.size()) == c, "batch_norm state mismatch");

    std::vector<T> mean(c), invstd(c);
    if (train) {
        std::vector<double> mu(c, 0.0), var(c, 0.0);
        for (int b = 0; b < n; ++b)
            for (int ch = 0; ch < c; ++ch) {
                const T* src = x.val().data() + (static_cast<long>(b) * c + ch) * spatial;
                for (long i = 0; i < spatial; ++i) mu[ch] += src[i];
            }
        for (int ch = 0; ch < c; ++ch) mu[ch] /= m;
        for (int b = 0; b < n; ++b)
            for (int ch = 0; ch < c; ++ch) {
                const T* src = x.val().data() + (static_cast<long>(b) * c + ch) * spatial;
                for (long i = 0; i < spatial; ++i) {
                    const double d = src[i] - mu[ch];
                    var[ch] += d * d;
                }
            }
        for (int ch = 0; ch < c; ++ch) {
            var[ch] /= m;  // biased, as used for normalization
            mean[ch] = static_cast<T>(mu[ch]);
            invstd[ch] = static_cast<T>(1.0 / std::sqrt(var[ch] + state.eps));
            const double unbiased = m > 1 ? var[ch] * m / (m - 1) : var[ch];
            state.running_mean[ch] = (T(1) - state.momentum) * state.running_mean[ch] +
                                     state.momentum * static_cast<T>(mu[ch]);
            state.running_var[ch] = (T(1) - state.momentum) * state.running_var[ch] +
                                    state.momentum * static_cast<T>(unbiased);
        }
    } else {
        for (int ch = 0; ch < c; ++ch) {
            mean[ch] = state.running_mean[ch];
            invstd[ch] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(state.running_var[ch]) + state.eps));
        }
    }

    Tensor<T> out(x.shape());
    for (long i = 0; i < out.size(); ++i) {
        const int ch = static_cast<int>((i / spatial) % c);
        const T xhat = (x.val().at(i) - mean[ch]) * invstd[ch];
        out.at(i) = gamma.val().at(ch) * xhat + beta.val().at(ch);
    }
    return Var<T>(make_node<T>(
        std::move(out), {x, gamma, beta},
        [c, spatial, m, mean, invstd, train](Node<T>& nd) {
            auto& px = *nd.parents[0];
            auto& pg = *nd.parents[1];
            auto& pb = *nd.parents[2];
            const long total = nd.value.size();
            std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
            for (long i = 0; i < total; ++i) {
                const int ch = static_cast<int>((i / spatial) % c);
                const double xhat = (px.value.at(i) - mean[ch]) * invstd[ch];
                const double dy = nd.grad.at(i);
                sum_dy[ch] += dy;
                sum_dy_xhat[ch] += dy * xhat;
            }
            if (detail::wants(nd, 1))
                for (int ch = 0; ch < c; ++ch) pg.grad.at(ch) += static_cast<T>(sum_dy_xhat[ch]);
            if (detail::wants(nd, 2))
                for (int ch = 0; ch < c; ++ch) pb.grad.at(ch) += static_cast<T>(sum_dy[ch]);
            if (!detail::wants(nd, 0)) return;
            for (long i = 0; i < total; ++i) {
                const int ch = static_cast<int>((i / spatial) % c);
                const double g = pg.value.at(ch);
                const double dy = nd.grad.at(i);
                if (train) {
                    const double xhat = (px.value.at(i) - mean[ch]) * invstd[ch];
                    px.grad.at(i) += static_cast<T>(
                        g * invstd[ch] * (dy - sum_dy[ch] / m - xhat * sum_dy_xhat[ch] / m));
                } else {
                    px.grad.at(i) += static_cast<T>(g * invstd[ch] * dy);
                }
            }
        }));
}

// Over the last dim of [N, D] with per-feature affine.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
    check(x.shape().size() == 2, "layer_norm wants [N,D]");
    const int n = x.shape()[0], d = x.shape()[1];
    std::vector<T> mean(n), invstd(n);
    Tensor<T> out(x.shape());
    for (int r = 0; r < n; ++r) {
        const T* src = x.val().data() + static_cast<long>(r) * d;
        double mu = 0;
        for (int j = 0; j < d; ++j) mu += src[j];
        mu /= d;
        double var = 0;
        for (int j = 0; j < d; ++j) {
            const double dv = src[j] - mu;
            var += dv * dv;
        }
        var /= d;
        mean[r] = static_cast<T>(mu);
        invstd[r] = static_cast<T>(1.0 / std::sqrt(var + eps));
        T* dst = out.data() + static_cast<long>(r) * d;
        for (int j = 0; j < d; ++j)
            dst[j] = gamma.val().at(j) * ((src[j] - mean[r]) * invstd[r]) + beta.val().at(j);
    }
    return Var<T>(make_node<T>(
        std::move(out), {x, gamma, beta}, [n, d, mean, invstd](Node<T>& nd) {
            auto& px = *nd.parents[0];
            auto& pg = *nd.parents[1];
            auto& pb = *nd.parents[2];
            for (int r = 0; r < n; ++r) {
                const T* src = px.value.data() + static_cast<long>(r) * d;
                const T* dy = nd.grad.data() + static_cast<long>(r) * d;
                double sum_dy = 0, sum_dy_xhat = 0;
                for (int j = 0; j < d; ++j) {
                    const double xhat = (src[j] - mean[r]) * invstd[r];
                    const double g = static_cast<double>(dy[j]) * pg.value.at(j);
                    sum_dy += g;
                    sum_dy_xhat += g * xhat;
                    if (detail::wants(nd, 1)) pg.grad.at(j) += static_cast<T>(dy[j] * xhat);
                    if (detail::wants(nd, 2)) pb.grad.at(j) += dy[j];
                }
                if (!detail::wants(nd, 0)) continue;
                for (int j = 0; j < d; ++j) {
                    const double xhat = (src[j] - mean[r]) * invstd[r];
                    const double g = static_cast<double>(dy[j]) * pg.value.at(j);
                    px.grad.at(static_cast<long>(r) * d + j) += static_cast<T>(
                        invstd[r] * (g - sum_dy / d - xhat * sum_dy_xhat / d));
                }
            }
        }));
}

}  // namespace synb
