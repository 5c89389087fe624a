// SPDX-License-Identifier: Apache-2.0
#include "distill3d/simd.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

namespace distill3d::simd {

namespace {

bool cpu_has_avx2() {
#if defined(DISTILL3D_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

Isa detect() {
    if (const char* env = std::getenv("DISTILL3D_SIMD"); env != nullptr && std::string(env) == "scalar")
        return Isa::Scalar;
    return cpu_has_avx2() ? Isa::Avx2 : Isa::Scalar;
}

std::atomic<Isa>& current() {
    static std::atomic<Isa> isa{detect()};
    return isa;
}

}  // namespace

Isa active_isa() { return current().load(std::memory_order_relaxed); }

std::string_view isa_name(Isa isa) { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

bool avx2_available() { return cpu_has_avx2(); }

Isa force_isa(Isa isa) {
    if (isa == Isa::Avx2 && !cpu_has_avx2()) isa = Isa::Scalar;
    return current().exchange(isa);
}

#define DISPATCH(fn, ...) \
    (active_isa() == Isa::Avx2 ? avx2::fn(__VA_ARGS__) : scalar::fn(__VA_ARGS__))

void axpby(double a, std::span<const double> x, double b, std::span<const double> y, std::span<double> out) {
    DISPATCH(axpby, a, x, b, y, out);
}
void scaled_diff(double s, std::span<const double> x, std::span<const double> y, std::span<double> out) {
    DISPATCH(scaled_diff, s, x, y, out);
}
void axpy(double a, std::span<const double> x, std::span<double> y) { DISPATCH(axpy, a, x, y); }
double dot(std::span<const double> x, std::span<const double> y) { return DISPATCH(dot, x, y); }
double sum_squares(std::span<const double> x) { return DISPATCH(sum_squares, x); }
void gemv(std::span<const double> w, std::size_t rows, std::size_t cols, std::span<const double> x,
          std::span<const double> bias, std::span<double> y) {
    DISPATCH(gemv, w, rows, cols, x, bias, y);
}
void gemv_transposed_acc(std::span<const double> w, std::size_t rows, std::size_t cols,
                         std::span<const double> g, std::span<double> x_grad) {
    DISPATCH(gemv_transposed_acc, w, rows, cols, g, x_grad);
}
void outer_acc(std::span<const double> g, std::span<const double> x, std::span<double> w_grad) {
    DISPATCH(outer_acc, g, x, w_grad);
}
void adam_update(const AdamParams& p, std::span<const double> grad, std::span<double> m, std::span<double> v,
                 std::span<double> param) {
    DISPATCH(adam_update, p, grad, m, v, param);
}

#undef DISPATCH

}  // namespace distill3d::simd
