// SPDX-License-Identifier: Apache-2.0
#include "distill3d/simd.hpp"

#include <cassert>
#include <cmath>

namespace distill3d::simd::scalar {

void axpby(double a, std::span<const double> x, double b, std::span<const double> y,
           std::span<double> out) {
    assert(x.size() == out.size() && y.size() == out.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x[i] + b * y[i];
}

void scaled_diff(double s, std::span<const double> x, std::span<const double> y,
                 std::span<double> out) {
    assert(x.size() == out.size() && y.size() == out.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * (x[i] - y[i]);
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
    assert(x.size() == y.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

double dot(std::span<const double> x, std::span<const double> y) {
    assert(x.size() == y.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * y[i];
    return acc;
}

double sum_squares(std::span<const double> x) { return dot(x, x); }

void gemv(std::span<const double> w, std::size_t rows, std::size_t cols,
          std::span<const double> x, std::span<const double> bias, std::span<double> y) {
    assert(w.size() == rows * cols && x.size() == cols && y.size() == rows);
    for (std::size_t r = 0; r < rows; ++r) {
        y[r] = (bias.empty() ? 0.0 : bias[r]) + dot(w.subspan(r * cols, cols), x);
    }
}

void gemv_transposed_acc(std::span<const double> w, std::size_t rows, std::size_t cols,
                         std::span<const double> g, std::span<double> x_grad) {
    assert(w.size() == rows * cols && g.size() == rows && x_grad.size() == cols);
    for (std::size_t r = 0; r < rows; ++r) axpy(g[r], w.subspan(r * cols, cols), x_grad);
}

void outer_acc(std::span<const double> g, std::span<const double> x, std::span<double> w_grad) {
    assert(w_grad.size() == g.size() * x.size());
    const std::size_t cols = x.size();
    for (std::size_t r = 0; r < g.size(); ++r) axpy(g[r], x, w_grad.subspan(r * cols, cols));
}

void adam_update(const AdamParams& p, std::span<const double> grad, std::span<double> m,
                 std::span<double> v, std::span<double> param) {
    assert(grad.size() == param.size() && m.size() == param.size() && v.size() == param.size());
    const double c1 = 1.0 - p.beta1, c2 = 1.0 - p.beta2;
    const double inv_b1 = 1.0 / p.bias1, inv_b2 = 1.0 / p.bias2;
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad[i];
        m[i] = p.beta1 * m[i] + c1 * g;
        v[i] = p.beta2 * v[i] + c2 * (g * g);
        const double denom = std::sqrt(v[i] * inv_b2) + p.eps;
        param[i] -= p.lr * (m[i] * inv_b1) / denom;
    }
}

}  // namespace distill3d::simd::scalar
