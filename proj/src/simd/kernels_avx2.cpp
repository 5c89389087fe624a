// SPDX-License-Identifier: Apache-2.0
// Compiled with -mavx2 -mfma. Only reached through the dispatcher after a CPU check.
#include "distill3d/simd.hpp"

#include <cassert>
#include <cmath>

#if defined(__AVX2__)
#include <immintrin.h>

namespace distill3d::simd::avx2 {

namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

}  // namespace

void axpby(double a, std::span<const double> x, double b, std::span<const double> y,
           std::span<double> out) {
    assert(x.size() == out.size() && y.size() == out.size());
    const std::size_t n = out.size();
    const __m256d va = _mm256_set1_pd(a), vb = _mm256_set1_pd(b);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        // mul + add, not fma: keeps bit parity with the scalar path
        const __m256d ax = _mm256_mul_pd(va, _mm256_loadu_pd(x.data() + i));
        const __m256d by = _mm256_mul_pd(vb, _mm256_loadu_pd(y.data() + i));
        _mm256_storeu_pd(out.data() + i, _mm256_add_pd(ax, by));
    }
    for (; i < n; ++i) out[i] = a * x[i] + b * y[i];
}

void scaled_diff(double s, std::span<const double> x, std::span<const double> y,
                 std::span<double> out) {
    assert(x.size() == out.size() && y.size() == out.size());
    const std::size_t n = out.size();
    const __m256d vs = _mm256_set1_pd(s);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x.data() + i), _mm256_loadu_pd(y.data() + i));
        _mm256_storeu_pd(out.data() + i, _mm256_mul_pd(vs, d));
    }
    for (; i < n; ++i) out[i] = s * (x[i] - y[i]);
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
    assert(x.size() == y.size());
    const std::size_t n = y.size();
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d ax = _mm256_mul_pd(va, _mm256_loadu_pd(x.data() + i));
        _mm256_storeu_pd(y.data() + i, _mm256_add_pd(_mm256_loadu_pd(y.data() + i), ax));
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

double dot(std::span<const double> x, std::span<const double> y) {
    assert(x.size() == y.size());
    const std::size_t n = x.size();
    __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x.data() + i), _mm256_loadu_pd(y.data() + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x.data() + i + 4), _mm256_loadu_pd(y.data() + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4)
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x.data() + i), _mm256_loadu_pd(y.data() + i), acc0);
    double acc = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

double sum_squares(std::span<const double> x) { return dot(x, x); }

void gemv(std::span<const double> w, std::size_t rows, std::size_t cols,
          std::span<const double> x, std::span<const double> bias, std::span<double> y) {
    assert(w.size() == rows * cols && x.size() == cols && y.size() == rows);
    for (std::size_t r = 0; r < rows; ++r)
        y[r] = (bias.empty() ? 0.0 : bias[r]) + dot(w.subspan(r * cols, cols), x);
}

void gemv_transposed_acc(std::span<const double> w, std::size_t rows, std::size_t cols,
                         std::span<const double> g, std::span<double> x_grad) {
    assert(w.size() == rows * cols && g.size() == rows && x_grad.size() == cols);
    for (std::size_t r = 0; r < rows; ++r) {
        if (g[r] != 0.0) axpy(g[r], w.subspan(r * cols, cols), x_grad);
    }
}

void outer_acc(std::span<const double> g, std::span<const double> x, std::span<double> w_grad) {
    assert(w_grad.size() == g.size() * x.size());
    const std::size_t cols = x.size();
    for (std::size_t r = 0; r < g.size(); ++r) {
        if (g[r] != 0.0) axpy(g[r], x, w_grad.subspan(r * cols, cols));
    }
}

void adam_update(const AdamParams& p, std::span<const double> grad, std::span<double> m,
                 std::span<double> v, std::span<double> param) {
    assert(grad.size() == param.size() && m.size() == param.size() && v.size() == param.size());
    const std::size_t n = param.size();
    const double c1 = 1.0 - p.beta1, c2 = 1.0 - p.beta2;
    const double inv_b1 = 1.0 / p.bias1, inv_b2 = 1.0 / p.bias2;
    const __m256d vb1 = _mm256_set1_pd(p.beta1), vb2 = _mm256_set1_pd(p.beta2);
    const __m256d vc1 = _mm256_set1_pd(c1), vc2 = _mm256_set1_pd(c2);
    const __m256d vib1 = _mm256_set1_pd(inv_b1), vib2 = _mm256_set1_pd(inv_b2);
    const __m256d veps = _mm256_set1_pd(p.eps), vlr = _mm256_set1_pd(p.lr);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d g = _mm256_loadu_pd(grad.data() + i);
        const __m256d mi = _mm256_add_pd(_mm256_mul_pd(vb1, _mm256_loadu_pd(m.data() + i)), _mm256_mul_pd(vc1, g));
        const __m256d vi = _mm256_add_pd(_mm256_mul_pd(vb2, _mm256_loadu_pd(v.data() + i)),
                                         _mm256_mul_pd(vc2, _mm256_mul_pd(g, g)));
        _mm256_storeu_pd(m.data() + i, mi);
        _mm256_storeu_pd(v.data() + i, vi);
        const __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(_mm256_mul_pd(vi, vib2)), veps);
        const __m256d step = _mm256_div_pd(_mm256_mul_pd(vlr, _mm256_mul_pd(mi, vib1)), denom);
        _mm256_storeu_pd(param.data() + i, _mm256_sub_pd(_mm256_loadu_pd(param.data() + i), step));
    }
    for (; i < n; ++i) {
        const double g = grad[i];
        m[i] = p.beta1 * m[i] + c1 * g;
        v[i] = p.beta2 * v[i] + c2 * (g * g);
        const double denom = std::sqrt(v[i] * inv_b2) + p.eps;
        param[i] -= p.lr * (m[i] * inv_b1) / denom;
    }
}

}  // namespace distill3d::simd::avx2

#else  // no AVX2 at compile time: forward to the reference kernels

namespace distill3d::simd::avx2 {
void axpby(double a, std::span<const double> x, double b, std::span<const double> y, std::span<double> out) {
    scalar::axpby(a, x, b, y, out);
}
void scaled_diff(double s, std::span<const double> x, std::span<const double> y, std::span<double> out) {
    scalar::scaled_diff(s, x, y, out);
}
void axpy(double a, std::span<const double> x, std::span<double> y) { scalar::axpy(a, x, y); }
double dot(std::span<const double> x, std::span<const double> y) { return scalar::dot(x, y); }
double sum_squares(std::span<const double> x) { return scalar::sum_squares(x); }
void gemv(std::span<const double> w, std::size_t rows, std::size_t cols, std::span<const double> x,
          std::span<const double> bias, std::span<double> y) {
    scalar::gemv(w, rows, cols, x, bias, y);
}
void gemv_transposed_acc(std::span<const double> w, std::size_t rows, std::size_t cols,
                         std::span<const double> g, std::span<double> x_grad) {
    scalar::gemv_transposed_acc(w, rows, cols, g, x_grad);
}
void outer_acc(std::span<const double> g, std::span<const double> x, std::span<double> w_grad) {
    scalar::outer_acc(g, x, w_grad);
}
void adam_update(const AdamParams& p, std::span<const double> grad, std::span<double> m, std::span<double> v,
                 std::span<double> param) {
    scalar::adam_update(p, grad, m, v, param);
}
}  // namespace distill3d::simd::avx2

#endif
