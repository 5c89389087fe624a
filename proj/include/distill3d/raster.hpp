// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "distill3d/camera.hpp"
#include "distill3d/fields.hpp"
#include "distill3d/image.hpp"
#include "distill3d/tetmesh.hpp"

namespace distill3d::raster {

/// Normal-map value of uncovered pixels: camera-facing (0,0,1) mapped by n·0.5+0.5.
inline constexpr Rgb kEmptyNormal{0.5, 0.5, 1.0};

struct RasterOutput {
    Image rgb;
    Image normal_map;
    std::vector<double> depth;         // +inf where uncovered
    std::vector<std::uint8_t> coverage;
    std::vector<int> face_id;          // -1 where uncovered
    std::vector<std::array<double, 3>> barycentrics;  // perspective-correct
    std::vector<std::array<double, 3>> unclamped_rgb;
    CameraPose camera;
    std::uint64_t mesh_fingerprint = 0;

    bool covered(int x, int y) const { return coverage[std::size_t(y) * rgb.width + x] != 0; }
};

/// Hash of vertex positions, normals and faces; used to reject stale backward calls.
std::uint64_t mesh_fingerprint(const SurfaceMesh& mesh);

/// Hard z-buffer rasterization. Color = clamp(texture(surface point)); normal =
/// renormalized barycentric blend of vertex normals, rotated into camera space.
RasterOutput rasterize(const SurfaceMesh& mesh, const Grid3& texture, const CameraPose& cam, const Rgb& background,
                       int workers = 1);

struct RasterGradients {
    std::vector<double> texture;   // laid out like texture.values()
    std::vector<Vec3> positions;   // per mesh vertex
    std::vector<Vec3> normals;     // per mesh vertex
};

/// Interior-only reverse pass: visibility and coverage are held fixed; barycentrics
/// follow the projected vertices.
/// Either upstream may be null. Throws StaleStateError when `mesh` differs from the
/// mesh that produced `state`.
RasterGradients rasterize_backward(const RasterOutput& state, const SurfaceMesh& mesh, const Grid3& texture,
                                   const Image* rgb_upstream, const Image* normal_upstream);

}  // namespace distill3d::raster
