// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>

#include "distill3d/errors.hpp"
#include "distill3d/tetmesh.hpp"
#include "oracles.hpp"

using namespace distill3d;

namespace {

TetGrid sphere_grid(int res, double r) {
    TetGrid g = build_tet_grid(res);
    g.set_sdf([r](const Vec3& p) { return oracle::sphere_sdf(p, r); });
    return g;
}

double loss_of(const SurfaceMesh& m, const std::vector<Vec3>& up) {
    double s = 0.0;
    for (std::size_t i = 0; i < up.size(); ++i) s += dot(m.vertices[i], up[i]);
    return s;
}

}  // namespace

TEST_CASE("tet grid tiles the cube with positive volumes") {
    const TetGrid g = build_tet_grid(8);
    CHECK(g.vertices.size() == 9u * 9u * 9u);
    CHECK(g.tets.size() == 6u * 8u * 8u * 8u);
    double total = 0.0;
    for (const auto& t : g.tets) {
        const double v = signed_tet_volume(g.vertices[t[0]], g.vertices[t[1]], g.vertices[t[2]], g.vertices[t[3]]);
        CHECK(v > 0.0);
        total += v;
    }
    CHECK(total == doctest::Approx(8.0).epsilon(1e-12));
    CHECK_THROWS_AS(build_tet_grid(4), InvalidArgument);
}

TEST_CASE("marching tets on a sphere SDF is closed and near the sphere") {
    const TetGrid g = sphere_grid(16, 0.55);
    const SurfaceMesh m = marching_tets(g);
    REQUIRE_FALSE(m.empty());
    CHECK(oracle::closed_two_manifold_edges(m));
    for (const Vec3& v : m.vertices) CHECK(std::abs(norm(v) - 0.55) <= 2.0 / 16);
    for (std::size_t i = 0; i < m.vertices.size(); ++i) CHECK(dot(m.normals[i], m.vertices[i]) > 0.0);
    for (const auto& f : m.faces) {
        const Vec3 n = cross(m.vertices[f[1]] - m.vertices[f[0]], m.vertices[f[2]] - m.vertices[f[0]]);
        CHECK(dot(n, m.vertices[f[0]] + m.vertices[f[1]] + m.vertices[f[2]]) > 0.0);
    }
}

TEST_CASE("positive scaling of S leaves the mesh bit-identical") {
    TetGrid g = sphere_grid(12, 0.5);
    const SurfaceMesh base = marching_tets(g);
    for (double s : {2.0, 0.5, 4.0}) {
        TetGrid scaled = g;
        for (double& v : scaled.sdf) v *= s;
        const SurfaceMesh m = marching_tets(scaled);
        CHECK(m.vertices == base.vertices);
        CHECK(m.faces == base.faces);
    }
}

TEST_CASE("all-positive or all-negative SDF yields an empty mesh") {
    TetGrid g = build_tet_grid(8);
    g.set_sdf([](const Vec3&) { return 1.0; });
    CHECK(marching_tets(g).empty());
    g.set_sdf([](const Vec3&) { return -1.0; });
    CHECK(marching_tets(g).empty());
}

TEST_CASE("symmetric edge: interpolation derivative is 1/(4 s_a)") {
    TetGrid g = build_tet_grid(8);
    g.set_sdf([](const Vec3& p) { return p.x - 0.125; });  // ±0.125 on the crossing edges
    const SurfaceMesh m = marching_tets(g);
    REQUIRE_FALSE(m.empty());
    std::vector<Vec3> up(m.vertices.size());
    std::size_t target = 0;
    for (std::size_t i = 0; i < m.provenance.size(); ++i) {
        const auto& p = m.provenance[i];
        if (g.vertices[p.b].x - g.vertices[p.a].x > 0.2 && std::abs(g.vertices[p.a].y - g.vertices[p.b].y) < 1e-12 &&
            std::abs(g.vertices[p.a].z - g.vertices[p.b].z) < 1e-12) {
            target = i;
            break;
        }
    }
    const auto& p = m.provenance[target];
    up[target] = {1.0, 0.0, 0.0};
    const auto tg = marching_tets_backward(g, m, up);
    const double s_a = g.sdf[p.a];
    const double edge = g.vertices[p.b].x - g.vertices[p.a].x;
    // dx/ds_a = edge · dλ/ds_a, with dλ/ds_a = −s_b/(s_a − s_b)² = 1/(4 s_a) when s_b = −s_a
    CHECK(tg.sdf[p.a] == doctest::Approx(edge / (4.0 * s_a)).epsilon(1e-9));
    CHECK(tg.sdf[p.b] == doctest::Approx(edge / (4.0 * s_a)).epsilon(1e-9));
}

TEST_CASE("marching tets backward matches central differences") {
    TetGrid g = sphere_grid(8, 0.6);
    Rng rng(21);
    for (auto& d : g.deform) d = {rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05)};
    g.clamp_deformation();
    const SurfaceMesh m = marching_tets(g);
    std::vector<Vec3> up(m.vertices.size());
    for (auto& u : up) u = {rng.normal(), rng.normal(), rng.normal()};
    const auto tg = marching_tets_backward(g, m, up);
    auto loss = [&] { return loss_of(marching_tets(g), up); };
    oracle::FdStats stats;
    for (std::size_t i : oracle::sample_indices(rng, g.sdf.size(), 400)) {
        if (tg.sdf[i] == 0.0 && std::abs(g.sdf[i]) < 1e-3) continue;
        stats.add(tg.sdf[i], oracle::central_difference(g.sdf[i], 1e-4, loss), 1e-3);
    }
    for (std::size_t i : oracle::sample_indices(rng, g.deform.size(), 200))
        for (int a = 0; a < 3; ++a) stats.add(tg.deform[i][a], oracle::central_difference(g.deform[i][a], 1e-4, loss), 1e-3);
    INFO("worst " << stats.worst);
    CHECK(stats.pass_fraction() >= 0.99);
}

TEST_CASE("stale mesh is rejected by the backward pass") {
    TetGrid g = sphere_grid(8, 0.6);
    const SurfaceMesh m = marching_tets(g);
    std::vector<Vec3> up(m.vertices.size());
    const TetGrid other = sphere_grid(8, 0.6);
    CHECK_THROWS_AS(marching_tets_backward(other, m, up), StaleStateError);
    g.sdf[g.vertex_index(4, 4, 1)] += 0.01;
    CHECK_THROWS_AS(marching_tets_backward(g, m, up), StaleStateError);
}

TEST_CASE("deformation projection bounds every component") {
    TetGrid g = build_tet_grid(8);
    for (auto& d : g.deform) d = {1.0, -1.0, 0.01};
    g.clamp_deformation();
    for (const auto& d : g.deform) CHECK(max_abs(d) <= g.max_deform());
}

TEST_CASE("vertex normal backward matches central differences") {
    const TetGrid g = sphere_grid(8, 0.6);
    SurfaceMesh m = marching_tets(g);
    Rng rng(5);
    std::vector<Vec3> up(m.vertices.size());
    for (auto& u : up) u = {rng.normal(), rng.normal(), rng.normal()};
    const auto grad = vertex_normals_backward(m, up);
    auto loss = [&] {
        const auto n = vertex_normals(m);
        double s = 0.0;
        for (std::size_t i = 0; i < n.size(); ++i) s += dot(n[i], up[i]);
        return s;
    };
    oracle::FdStats stats;
    for (std::size_t i : oracle::sample_indices(rng, m.vertices.size(), 60))
        for (int a = 0; a < 3; ++a) stats.add(grad[i][a], oracle::central_difference(m.vertices[i][a], 1e-5, loss), 1e-3);
    INFO("worst " << stats.worst);
    CHECK(stats.pass_fraction() >= 0.99);
}

TEST_CASE("OBJ and TETGRID files round-trip") {
    const auto dir = std::filesystem::temp_directory_path() / "distill3d_tetmesh_test";
    std::filesystem::create_directories(dir);
    TetGrid g = sphere_grid(8, 0.5);
    g.origin = TetGridOrigin::FromNerf;
    g.deform[10] = {0.01, -0.02, 0.03};
    const SurfaceMesh m = marching_tets(g);
    std::vector<Rgb> colors(m.vertices.size(), Rgb{0.2, 0.4, 0.6});
    export_mesh(m, colors, dir / "mesh.obj");
    CHECK(std::filesystem::exists(dir / "mesh.ply"));
    const SurfaceMesh back = read_obj(dir / "mesh.obj");
    CHECK(back.faces == m.faces);
    REQUIRE(back.vertices.size() == m.vertices.size());
    for (std::size_t i = 0; i < m.vertices.size(); ++i) CHECK(norm(back.vertices[i] - m.vertices[i]) < 2e-6);

    save_tet_grid(dir / "grid.tetgrid", g);
    const TetGrid h = load_tet_grid(dir / "grid.tetgrid");
    CHECK(h.sdf == g.sdf);
    CHECK(h.deform == g.deform);
    CHECK(h.origin == TetGridOrigin::FromNerf);
    std::filesystem::remove_all(dir);
}
