// SPDX-License-Identifier: Apache-2.0
#include "distill3d/raster.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "distill3d/errors.hpp"
#include "distill3d/parallel.hpp"

namespace distill3d::raster {

namespace {

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

struct Projected {
    double x = 0.0, y = 0.0;
    double inv_depth = 0.0;
    bool valid = false;
};

}  // namespace

std::uint64_t mesh_fingerprint(const SurfaceMesh& mesh) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    h = fnv1a(h, mesh.vertices.data(), mesh.vertices.size() * sizeof(Vec3));
    h = fnv1a(h, mesh.normals.data(), mesh.normals.size() * sizeof(Vec3));
    h = fnv1a(h, mesh.faces.data(), mesh.faces.size() * sizeof(std::array<int, 3>));
    return h;
}

RasterOutput rasterize(const SurfaceMesh& mesh, const Grid3& texture, const CameraPose& cam, const Rgb& background,
                       int workers) {
    if (texture.channels() != 3) throw InvalidArgument("rasterize: texture grid must have 3 channels");
    if (!mesh.faces.empty() && mesh.normals.size() != mesh.vertices.size())
        throw InvalidArgument("rasterize: mesh needs one normal per vertex");
    const int W = cam.width, H = cam.height;
    const std::size_t n_pix = std::size_t(W) * H;
    RasterOutput out;
    out.camera = cam;
    out.mesh_fingerprint = mesh_fingerprint(mesh);
    out.rgb = Image::filled(W, H, background);
    out.normal_map = Image::filled(W, H, kEmptyNormal);
    out.depth.assign(n_pix, std::numeric_limits<double>::infinity());
    out.coverage.assign(n_pix, 0);
    out.face_id.assign(n_pix, -1);
    out.barycentrics.assign(n_pix, {0.0, 0.0, 0.0});
    out.unclamped_rgb.assign(n_pix, background);
    if (mesh.faces.empty()) return out;

    std::vector<Projected> proj(mesh.vertices.size());
    for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
        if (auto sp = project(cam, to_camera(cam, mesh.vertices[v])))
            proj[v] = {sp->x, sp->y, 1.0 / sp->depth, true};
    }

    // Rows are partitioned across workers; each worker scans all faces for its rows,
    // so the z-buffer result does not depend on the worker count.
    parallel_chunks(H, workers, [&](int, int row_begin, int row_end) {
        for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
            const auto& tri = mesh.faces[f];
            const Projected &p0 = proj[tri[0]], &p1 = proj[tri[1]], &p2 = proj[tri[2]];
            if (!p0.valid || !p1.valid || !p2.valid) continue;
            const double area = (p1.x - p0.x) * (p2.y - p0.y) - (p2.x - p0.x) * (p1.y - p0.y);
            if (std::abs(area) < 1e-14) continue;
            const int x_lo = std::max(0, int(std::floor(std::min({p0.x, p1.x, p2.x}) - 0.5)));
            const int x_hi = std::min(W - 1, int(std::ceil(std::max({p0.x, p1.x, p2.x}) - 0.5)));
            const int y_lo = std::max(row_begin, int(std::floor(std::min({p0.y, p1.y, p2.y}) - 0.5)));
            const int y_hi = std::min(row_end - 1, int(std::ceil(std::max({p0.y, p1.y, p2.y}) - 0.5)));
            for (int py = y_lo; py <= y_hi; ++py)
                for (int px = x_lo; px <= x_hi; ++px) {
                    const double sx = px + 0.5, sy = py + 0.5;
                    double b0 = ((p1.x - sx) * (p2.y - sy) - (p2.x - sx) * (p1.y - sy)) / area;
                    double b1 = ((p2.x - sx) * (p0.y - sy) - (p0.x - sx) * (p2.y - sy)) / area;
                    double b2 = 1.0 - b0 - b1;
                    if (b0 < 0.0 || b1 < 0.0 || b2 < 0.0) continue;
                    // perspective-correct weights
                    const double w0 = b0 * p0.inv_depth, w1 = b1 * p1.inv_depth, w2 = b2 * p2.inv_depth;
                    const double inv = w0 + w1 + w2;
                    const double depth = 1.0 / inv;
                    const std::size_t idx = std::size_t(py) * W + px;
                    if (!(depth < out.depth[idx])) continue;
                    out.depth[idx] = depth;
                    out.coverage[idx] = 1;
                    out.face_id[idx] = static_cast<int>(f);
                    out.barycentrics[idx] = {w0 / inv, w1 / inv, w2 / inv};
                }
        }
        // shade
        const Mat3 world_to_cam = cam.rotation.transposed();
        for (int py = row_begin; py < row_end; ++py)
            for (int px = 0; px < W; ++px) {
                const std::size_t idx = std::size_t(py) * W + px;
                if (!out.coverage[idx]) continue;
                const auto& tri = mesh.faces[out.face_id[idx]];
                const auto& b = out.barycentrics[idx];
                const Vec3 point = mesh.vertices[tri[0]] * b[0] + mesh.vertices[tri[1]] * b[1] + mesh.vertices[tri[2]] * b[2];
                const FieldSample s = sample_trilinear(texture, point);
                out.unclamped_rgb[idx] = s.value;
                out.rgb.set(px, py, {std::clamp(s.value[0], 0.0, 1.0), std::clamp(s.value[1], 0.0, 1.0),
                                     std::clamp(s.value[2], 0.0, 1.0)});
                const Vec3 blended = mesh.normals[tri[0]] * b[0] + mesh.normals[tri[1]] * b[1] + mesh.normals[tri[2]] * b[2];
                const double len = norm(blended);
                const Vec3 n_cam = len > 0.0 ? world_to_cam * (blended / len) : Vec3{0.0, 0.0, 1.0};
                out.normal_map.set(px, py, {n_cam.x * 0.5 + 0.5, n_cam.y * 0.5 + 0.5, n_cam.z * 0.5 + 0.5});
            }
    });
    return out;
}

RasterGradients rasterize_backward(const RasterOutput& state, const SurfaceMesh& mesh, const Grid3& texture,
                                   const Image* rgb_upstream, const Image* normal_upstream) {
    if (mesh_fingerprint(mesh) != state.mesh_fingerprint)
        throw StaleStateError("rasterize_backward: mesh changed since rasterize");
    const int W = state.rgb.width, H = state.rgb.height;
    if ((rgb_upstream && !rgb_upstream->same_shape(state.rgb)) ||
        (normal_upstream && !normal_upstream->same_shape(state.rgb)))
        throw InvalidArgument("rasterize_backward: upstream shape mismatch");

    RasterGradients g;
    g.texture.assign(texture.values().size(), 0.0);
    g.positions.assign(mesh.vertices.size(), Vec3{});
    g.normals.assign(mesh.vertices.size(), Vec3{});
    const Mat3& cam_to_world = state.camera.rotation;

    const CameraPose& cam = state.camera;
    std::vector<Projected> proj(mesh.vertices.size());
    for (std::size_t v = 0; v < mesh.vertices.size(); ++v)
        if (auto sp = project(cam, to_camera(cam, mesh.vertices[v]))) proj[v] = {sp->x, sp->y, 1.0 / sp->depth, true};
    // Per-vertex gradient w.r.t. screen x, screen y and inverse depth.
    std::vector<Vec3> g_screen(mesh.vertices.size(), Vec3{});

    for (int py = 0; py < H; ++py)
        for (int px = 0; px < W; ++px) {
            const std::size_t idx = std::size_t(py) * W + px;
            if (!state.coverage[idx]) continue;
            const auto& tri = mesh.faces[state.face_id[idx]];
            const auto& b = state.barycentrics[idx];
            std::array<double, 3> g_bary{};

            if (rgb_upstream) {
                std::array<double, 3> up{};
                bool any = false;
                for (int c = 0; c < 3; ++c) {
                    const double u = state.unclamped_rgb[idx][c];
                    up[c] = (u < 0.0 || u > 1.0) ? 0.0 : rgb_upstream->at(px, py, c);
                    any |= up[c] != 0.0;
                }
                if (any) {
                    const Vec3 point = mesh.vertices[tri[0]] * b[0] + mesh.vertices[tri[1]] * b[1] +
                                       mesh.vertices[tri[2]] * b[2];
                    sample_trilinear_backward(texture, point, up).accumulate_into(g.texture);
                    const auto jac = grid_jacobian(texture, point);
                    const Vec3 d_point = jac[0] * up[0] + jac[1] * up[1] + jac[2] * up[2];
                    for (int k = 0; k < 3; ++k) {
                        g.positions[tri[k]] += d_point * b[k];
                        g_bary[k] += dot(d_point, mesh.vertices[tri[k]]);
                    }
                }
            }
            if (normal_upstream) {
                const Vec3 d_ncam{0.5 * normal_upstream->at(px, py, 0), 0.5 * normal_upstream->at(px, py, 1),
                                  0.5 * normal_upstream->at(px, py, 2)};
                const Vec3 blended =
                    mesh.normals[tri[0]] * b[0] + mesh.normals[tri[1]] * b[1] + mesh.normals[tri[2]] * b[2];
                const double len = norm(blended);
                if (d_ncam != Vec3{} && len > 0.0) {
                    const Vec3 n = blended / len;
                    const Vec3 d_nworld = cam_to_world * d_ncam;
                    const Vec3 d_blended = (d_nworld - n * dot(n, d_nworld)) / len;
                    for (int k = 0; k < 3; ++k) {
                        g.normals[tri[k]] += d_blended * b[k];
                        g_bary[k] += dot(d_blended, mesh.normals[tri[k]]);
                    }
                }
            }
            if (g_bary == std::array<double, 3>{}) continue;

            // perspective-correct weights back to screen barycentrics
            const Projected &p0 = proj[tri[0]], &p1 = proj[tri[1]], &p2 = proj[tri[2]];
            const std::array<double, 3> q{p0.inv_depth, p1.inv_depth, p2.inv_depth};
            const double sx = px + 0.5, sy = py + 0.5;
            const double area = (p1.x - p0.x) * (p2.y - p0.y) - (p2.x - p0.x) * (p1.y - p0.y);
            const double e0 = (p1.x - sx) * (p2.y - sy) - (p2.x - sx) * (p1.y - sy);
            const double e1 = (p2.x - sx) * (p0.y - sy) - (p0.x - sx) * (p2.y - sy);
            const std::array<double, 3> bs{e0 / area, e1 / area, 1.0 - e0 / area - e1 / area};
            const double sum_w = bs[0] * q[0] + bs[1] * q[1] + bs[2] * q[2];
            const double mean = g_bary[0] * b[0] + g_bary[1] * b[1] + g_bary[2] * b[2];
            std::array<double, 3> g_bs{};
            for (int k = 0; k < 3; ++k) {
                const double g_w = (g_bary[k] - mean) / sum_w;
                g_bs[k] = g_w * q[k];
                g_screen[tri[k]].z += g_w * bs[k];
            }
            const double g_e0 = (g_bs[0] - g_bs[2]) / area, g_e1 = (g_bs[1] - g_bs[2]) / area;
            const double g_area = -(g_e0 * e0 + g_e1 * e1) / area;
            Vec3& s0 = g_screen[tri[0]];
            Vec3& s1 = g_screen[tri[1]];
            Vec3& s2 = g_screen[tri[2]];
            s1.x += g_e0 * (p2.y - sy) + g_area * (p2.y - p0.y);
            s1.y += -g_e0 * (p2.x - sx) - g_area * (p2.x - p0.x);
            s2.x += -g_e0 * (p1.y - sy) + g_e1 * (p0.y - sy) - g_area * (p1.y - p0.y);
            s2.y += g_e0 * (p1.x - sx) - g_e1 * (p0.x - sx) + g_area * (p1.x - p0.x);
            s0.x += -g_e1 * (p2.y - sy) + g_area * (p1.y - p2.y);
            s0.y += g_e1 * (p2.x - sx) + g_area * (p2.x - p1.x);
        }

    // screen space back to world positions
    const double f = cam.focal(), aspect = double(cam.width) / cam.height;
    for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
        const Vec3& gs = g_screen[v];
        if (gs == Vec3{} || !proj[v].valid) continue;
        const Vec3 qc = to_camera(cam, mesh.vertices[v]);
        const double d = -qc.z;
        const double g_depth = gs.x * (-0.5 * W * f * qc.x / (aspect * d * d)) + gs.y * (0.5 * H * f * qc.y / (d * d)) -
                               gs.z / (d * d);
        const Vec3 g_cam{gs.x * 0.5 * W * f / (aspect * d), -gs.y * 0.5 * H * f / d, -g_depth};
        g.positions[v] += cam_to_world * g_cam;
    }
    return g;
}

}  // namespace distill3d::raster
