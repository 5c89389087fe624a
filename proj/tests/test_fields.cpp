// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <sstream>

#include "distill3d/errors.hpp"
#include "distill3d/fields.hpp"
#include "oracles.hpp"

using namespace distill3d;

TEST_CASE("grid nodes span the cube") {
    Grid3 g(5, 1);
    CHECK(g.node_position(0, 0, 0) == Vec3{-1, -1, -1});
    CHECK(g.node_position(4, 4, 4) == Vec3{1, 1, 1});
    CHECK(g.spacing() == doctest::Approx(0.5));
    CHECK_THROWS_AS(Grid3(1, 1), InvalidArgument);
    CHECK_THROWS_AS(Grid3(4, 2), InvalidArgument);
}

TEST_CASE("trilinear reproduces affine fields exactly") {
    Grid3 g(7, 3);
    g.fill_from([](const Vec3& p) { return std::array<double, 3>{0.5 * p.x - 0.25 * p.y + 0.125 * p.z, 0.25, p.z * 0.5}; });
    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
        const Vec3 p{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        const auto s = sample_trilinear(g, p);
        REQUIRE(s.inside);
        CHECK(s.value[0] == doctest::Approx(0.5 * p.x - 0.25 * p.y + 0.125 * p.z).epsilon(1e-6));
        CHECK(s.value[1] == doctest::Approx(0.25));
        const auto jac = grid_jacobian(g, p);
        CHECK(jac[0].x == doctest::Approx(0.5).epsilon(1e-6));
        CHECK(jac[0].y == doctest::Approx(-0.25).epsilon(1e-6));
        CHECK(jac[2].z == doctest::Approx(0.5).epsilon(1e-6));
    }
}

TEST_CASE("sample outside the cube is flagged and contributes nothing") {
    Grid3 g(4, 1, 1.0f);
    const auto s = sample_trilinear(g, {1.5, 0, 0});
    CHECK_FALSE(s.inside);
    const std::array<double, 1> up{1.0};
    CHECK(sample_trilinear_backward(g, {1.5, 0, 0}, up).count == 0);
}

TEST_CASE("trilinear backward matches finite differences") {
    Grid3 g(6, 3);
    Rng rng(11);
    for (float& v : g.values()) v = float(rng.uniform(-1, 1));
    const Vec3 p{0.13, -0.42, 0.77};
    const std::array<double, 3> up{0.3, -1.1, 0.7};
    std::vector<double> dense(g.values().size(), 0.0);
    sample_trilinear_backward(g, p, up).accumulate_into(dense);
    for (std::size_t i = 0; i < dense.size(); ++i) {
        auto loss = [&] {
            const auto s = sample_trilinear(g, p);
            return s.value[0] * up[0] + s.value[1] * up[1] + s.value[2] * up[2];
        };
        const double fd = oracle::central_difference(g.values()[i], 1e-3, loss);
        CHECK(dense[i] == doctest::Approx(fd).epsilon(1e-6).scale(1.0));
    }
}

TEST_CASE("spatial gradient of a scalar grid matches finite differences") {
    Grid3 g(9, 1);
    g.fill_from([](const Vec3& p) { return std::array<double, 1>{std::sin(2 * p.x) * p.y + p.z * p.z}; });
    const Vec3 p{0.31, 0.17, -0.58};
    const Vec3 grad = grid_gradient_field(g, p);
    const double h = 1e-6;
    for (int a = 0; a < 3; ++a) {
        Vec3 lo = p, hi = p;
        lo[a] -= h;
        hi[a] += h;
        const double fd = (sample_trilinear(g, hi).value[0] - sample_trilinear(g, lo).value[0]) / (2 * h);
        CHECK(grad[a] == doctest::Approx(fd).epsilon(1e-6));
    }
}

TEST_CASE("GRID3 serialization round-trips bit-exactly") {
    Grid3 g(5, 3);
    Rng rng(1);
    for (float& v : g.values()) v = float(rng.normal());
    std::stringstream ss;
    write_grid(ss, g);
    CHECK(ss.str().rfind("GRID3 5 3\n", 0) == 0);
    CHECK(read_grid(ss) == g);
    std::stringstream bad("GRID3 5 3\n\x01\x02");
    CHECK_THROWS_AS(read_grid(bad), IoError);
}
