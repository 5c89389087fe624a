// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "distill3d/image.hpp"
#include "distill3d/math.hpp"

namespace distill3d {

/// Where a TetGrid's SDF came from. Stage 2 only accepts grids seeded from a NeRF
/// unless explicitly overridden.
enum class TetGridOrigin { Built, FromNerf };

/// Deformable tetrahedral grid over [-1,1]^3: canonical vertices, Kuhn-split tets,
/// per-vertex SDF (negative inside) and per-vertex deformation.
struct TetGrid {
    int resolution = 0;
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 4>> tets;
    std::vector<double> sdf;
    std::vector<Vec3> deform;
    std::uint64_t uid = 0;
    TetGridOrigin origin = TetGridOrigin::Built;

    double spacing() const noexcept { return 2.0 / resolution; }
    double max_deform() const noexcept { return 0.45 * spacing(); }
    Vec3 position(int v) const noexcept { return vertices[v] + deform[v]; }
    int vertex_index(int i, int j, int k) const noexcept { return (k * (resolution + 1) + j) * (resolution + 1) + i; }

    /// Project every deformation into the box ‖Δv‖∞ ≤ 0.45·spacing.
    void clamp_deformation();
    /// Fill S from a function of the canonical vertex position.
    template <class Fn>
    void set_sdf(Fn&& fn) {
        for (std::size_t v = 0; v < vertices.size(); ++v) sdf[v] = fn(vertices[v]);
    }
};

/// resolution³ cubes, six tets each. ΔV = 0, S = 0.
TetGrid build_tet_grid(int resolution);

double signed_tet_volume(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d);

/// Mesh vertex lying on tet edge (a, b): position = (1−λ)·pos_a + λ·pos_b, λ = s_a/(s_a − s_b).
struct EdgeProvenance {
    int a = 0;
    int b = 0;
    double lambda = 0.0;
};

struct SurfaceMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> faces;
    std::vector<EdgeProvenance> provenance;  // empty for meshes not produced by marching_tets
    std::vector<Vec3> normals;
    std::uint64_t source_uid = 0;

    bool empty() const noexcept { return faces.empty(); }
};

/// Marching tetrahedra over the effective positions. Vertices are deduplicated per
/// tet edge and numbered in sorted edge order; faces wind outward (towards positive S).
/// Faces with area < 1e-12 are dropped and unreferenced vertices compacted away.
SurfaceMesh marching_tets(const TetGrid& grid);

struct TetGradients {
    std::vector<double> sdf;
    std::vector<Vec3> deform;
};

/// Gradients of mesh vertex positions w.r.t. S and ΔV with topology held fixed.
/// Throws StaleStateError when the mesh no longer matches the grid.
TetGradients marching_tets_backward(const TetGrid& grid, const SurfaceMesh& mesh, std::span<const Vec3> upstream);

/// Area-weighted vertex normals. Throws GeometryError for a vertex without incident area.
std::vector<Vec3> vertex_normals(const SurfaceMesh& mesh);
/// Adjoint of vertex_normals: maps normal gradients to vertex-position gradients.
std::vector<Vec3> vertex_normals_backward(const SurfaceMesh& mesh, std::span<const Vec3> upstream);

/// OBJ with `v`, `vn`, `f i//i j//j k//k`; with colors also an ASCII PLY next to it (same stem).
void export_mesh(const SurfaceMesh& mesh, const std::optional<std::vector<Rgb>>& colors,
                 const std::filesystem::path& obj_path);
void write_obj(const std::filesystem::path& path, const SurfaceMesh& mesh);
void write_ply(const std::filesystem::path& path, const SurfaceMesh& mesh, std::span<const Rgb> colors);
/// Reads the subset of OBJ written by write_obj (v, vn, triangular f).
SurfaceMesh read_obj(const std::filesystem::path& path);

// TETGRID checkpoint: `TETGRID <res> <origin>\n`, then little-endian float64 S and ΔV.
void save_tet_grid(const std::filesystem::path& path, const TetGrid& grid);
TetGrid load_tet_grid(const std::filesystem::path& path);

}  // namespace distill3d
