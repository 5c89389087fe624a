// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <vector>

#include "distill3d/diffusion.hpp"
#include "distill3d/optim.hpp"
#include "distill3d/simd.hpp"
#include "oracles.hpp"

using namespace distill3d;
namespace sc = distill3d::simd::scalar;
namespace vx = distill3d::simd::avx2;

namespace {

std::vector<double> randn(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    rng.fill_normal(v);
    return v;
}

// Lengths around the 4-lane width plus one large odd size.
const std::vector<std::size_t> kSizes{0, 1, 2, 3, 4, 5, 7, 8, 9, 15, 16, 17, 31, 64, 1031};

bool close(double a, double b, double tol = 1e-12) { return std::abs(a - b) <= tol * std::max(1.0, std::abs(a)); }

struct IsaGuard {
    simd::Isa saved;
    explicit IsaGuard(simd::Isa isa) : saved(simd::force_isa(isa)) {}
    ~IsaGuard() { simd::force_isa(saved); }
};

}  // namespace

TEST_CASE("dispatcher reports a usable ISA") {
    const auto isa = simd::active_isa();
    CHECK((isa == simd::Isa::Scalar || simd::avx2_available()));
    CHECK(simd::isa_name(simd::Isa::Scalar) == "scalar");
    IsaGuard g(simd::Isa::Scalar);
    CHECK(simd::active_isa() == simd::Isa::Scalar);
}

TEST_CASE("elementwise kernels agree bit-for-bit") {
    if (!simd::avx2_available()) {
        MESSAGE("AVX2 unavailable; comparing scalar against itself");
    }
    Rng rng(1);
    for (std::size_t n : kSizes) {
        CAPTURE(n);
        const auto x = randn(rng, n), y = randn(rng, n);
        std::vector<double> a(n), b(n);
        sc::axpby(0.3, x, -1.7, y, a);
        vx::axpby(0.3, x, -1.7, y, b);
        CHECK(a == b);
        sc::scaled_diff(2.5, x, y, a);
        vx::scaled_diff(2.5, x, y, b);
        CHECK(a == b);
        a = y;
        b = y;
        sc::axpy(-0.9, x, a);
        vx::axpy(-0.9, x, b);
        CHECK(a == b);
    }
}

TEST_CASE("unaligned views agree") {
    Rng rng(2);
    const auto x = randn(rng, 70), y = randn(rng, 70);
    for (std::size_t off = 0; off < 4; ++off) {
        std::span<const double> xs(x.data() + off, 61), ys(y.data() + off, 61);
        std::vector<double> a(61), b(61);
        sc::axpby(1.1, xs, 0.4, ys, a);
        vx::axpby(1.1, xs, 0.4, ys, b);
        CHECK(a == b);
        CHECK(close(sc::dot(xs, ys), vx::dot(xs, ys)));
    }
}

TEST_CASE("reductions agree to rounding") {
    Rng rng(3);
    for (std::size_t n : kSizes) {
        CAPTURE(n);
        const auto x = randn(rng, n), y = randn(rng, n);
        CHECK(close(sc::dot(x, y), vx::dot(x, y)));
        CHECK(close(sc::sum_squares(x), vx::sum_squares(x)));
        CHECK(sc::sum_squares(x) >= 0.0);
    }
}

TEST_CASE("matrix kernels agree to rounding") {
    Rng rng(4);
    for (auto [rows, cols] : std::vector<std::pair<std::size_t, std::size_t>>{{1, 1}, {3, 5}, {8, 8}, {17, 33}, {64, 203}}) {
        CAPTURE(rows);
        CAPTURE(cols);
        const auto w = randn(rng, rows * cols), x = randn(rng, cols), bias = randn(rng, rows), g = randn(rng, rows);
        std::vector<double> ya(rows), yb(rows);
        sc::gemv(w, rows, cols, x, bias, ya);
        vx::gemv(w, rows, cols, x, bias, yb);
        for (std::size_t i = 0; i < rows; ++i) CHECK(close(ya[i], yb[i]));

        std::vector<double> ga(cols, 0.5), gb(cols, 0.5);
        sc::gemv_transposed_acc(w, rows, cols, g, ga);
        vx::gemv_transposed_acc(w, rows, cols, g, gb);
        for (std::size_t j = 0; j < cols; ++j) CHECK(close(ga[j], gb[j]));

        std::vector<double> wa(rows * cols, 0.1), wb(rows * cols, 0.1);
        sc::outer_acc(g, x, wa);
        vx::outer_acc(g, x, wb);
        CHECK(wa == wb);
    }
}

TEST_CASE("gemv matches a naive product") {
    Rng rng(5);
    const std::size_t rows = 7, cols = 13;
    const auto w = randn(rng, rows * cols), x = randn(rng, cols), bias = randn(rng, rows);
    std::vector<double> y(rows);
    simd::gemv(w, rows, cols, x, bias, y);
    for (std::size_t i = 0; i < rows; ++i) {
        double s = bias[i];
        for (std::size_t j = 0; j < cols; ++j) s += w[i * cols + j] * x[j];
        CHECK(close(y[i], s));
    }
}

TEST_CASE("adam update agrees bit-for-bit") {
    Rng rng(6);
    for (std::size_t n : kSizes) {
        CAPTURE(n);
        simd::AdamParams p;
        p.lr = 0.01;
        std::vector<double> ma(n, 0.0), va(n, 0.0), pa = randn(rng, n);
        std::vector<double> mb = ma, vb = va, pb = pa;
        for (int t = 1; t <= 5; ++t) {
            p.bias1 = 1.0 - std::pow(p.beta1, t);
            p.bias2 = 1.0 - std::pow(p.beta2, t);
            const auto g = randn(rng, n);
            sc::adam_update(p, g, ma, va, pa);
            vx::adam_update(p, g, mb, vb, pb);
        }
        CHECK(pa == pb);
        CHECK(ma == mb);
        CHECK(va == vb);
    }
}

TEST_CASE("residual model output is ISA independent") {
    const NoiseSchedule s = linear_schedule();
    Tensor target(3, 8, 8, 0.1);
    auto base = std::make_shared<DeltaTargetDenoiser>(s, target);
    Rng rng(7);
    Tensor render(3, 8, 8);
    rng.fill_normal(render.data);
    DenoiserCondition cond;
    cond.camera = look_at_origin(10, 10, 2.2, 50, 8, 8);

    auto run = [&](simd::Isa isa) {
        IsaGuard g(isa);
        ResidualScoreModel phi(base, target, {32, 8, 1e-2, 3});
        Rng r(9);
        for (int i = 0; i < 5; ++i) phi.train_step(render, cond, s, {}, r);
        return phi.predict(render, 300, cond);
    };
    const Tensor a = run(simd::Isa::Scalar), b = run(simd::Isa::Avx2);
    for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(close(a.data[i], b.data[i], 1e-9));
}

TEST_CASE("Adam on float storage matches the double path") {
    Rng rng(8);
    std::vector<double> pd = randn(rng, 37);
    std::vector<float> pf(pd.begin(), pd.end());
    for (std::size_t i = 0; i < pd.size(); ++i) pd[i] = pf[i];
    Adam a, b;
    for (int t = 0; t < 3; ++t) {
        const auto g = randn(rng, pd.size());
        a.step(std::span<double>(pd), g);
        b.step(std::span<float>(pf), g);
    }
    for (std::size_t i = 0; i < pd.size(); ++i) CHECK(pf[i] == doctest::Approx(pd[i]).epsilon(1e-5));
}
