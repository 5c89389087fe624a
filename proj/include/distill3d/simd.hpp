// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dense double-precision kernels used by the latent-space and optimizer code.
//
// Every kernel has a scalar reference implementation (namespace `scalar`) and,
// on x86-64, an AVX2 variant (namespace `avx2`). The unqualified entry points
// dispatch once at startup on CPU support. Elementwise kernels avoid FMA so the
// two paths agree bit-for-bit; reductions and matrix kernels may differ in the
// last bits because of lane-wise accumulation order.
//
// Setting DISTILL3D_SIMD=scalar in the environment forces the reference path.

#include <cstddef>
#include <span>
#include <string_view>

namespace distill3d::simd {

enum class Isa { Scalar, Avx2 };

/// ISA selected by the dispatcher.
Isa active_isa();
std::string_view isa_name(Isa isa);
/// True when the AVX2 kernels were compiled in and the CPU supports them.
bool avx2_available();
/// Test hook: override the dispatcher. Returns the previous choice.
Isa force_isa(Isa isa);

struct AdamParams {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    /// Bias corrections 1 − β₁ᵗ and 1 − β₂ᵗ for the current step.
    double bias1 = 1.0;
    double bias2 = 1.0;
};

#define DISTILL3D_SIMD_KERNELS                                                                  \
    /* out = a·x + b·y */                                                                        \
    void axpby(double a, std::span<const double> x, double b, std::span<const double> y,       \
               std::span<double> out);                                                          \
    /* out = s·(x − y) */                                                                        \
    void scaled_diff(double s, std::span<const double> x, std::span<const double> y,           \
                     std::span<double> out);                                                    \
    /* y += a·x */                                                                               \
    void axpy(double a, std::span<const double> x, std::span<double> y);                       \
    double dot(std::span<const double> x, std::span<const double> y);                          \
    double sum_squares(std::span<const double> x);                                             \
    /* y = W·x + bias, W row-major rows×cols */                                                 \
    void gemv(std::span<const double> w, std::size_t rows, std::size_t cols,                  \
              std::span<const double> x, std::span<const double> bias, std::span<double> y);  \
    /* x_grad += Wᵀ·g */                                                                         \
    void gemv_transposed_acc(std::span<const double> w, std::size_t rows, std::size_t cols,   \
                             std::span<const double> g, std::span<double> x_grad);            \
    /* W_grad += g·xᵀ */                                                                         \
    void outer_acc(std::span<const double> g, std::span<const double> x, std::span<double> w_grad); \
    void adam_update(const AdamParams& p, std::span<const double> grad, std::span<double> m,  \
                     std::span<double> v, std::span<double> param);

namespace scalar {
DISTILL3D_SIMD_KERNELS
}
namespace avx2 {
DISTILL3D_SIMD_KERNELS
}
DISTILL3D_SIMD_KERNELS

#undef DISTILL3D_SIMD_KERNELS

}  // namespace distill3d::simd
