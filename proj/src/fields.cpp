// SPDX-License-Identifier: Apache-2.0
#include "distill3d/fields.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cassert>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "distill3d/errors.hpp"

namespace distill3d {

Grid3::Grid3(int resolution, int channels, float fill) : resolution_(resolution), channels_(channels) {
    if (resolution < 2) throw InvalidArgument("Grid3: resolution must be >= 2");
    if (channels != 1 && channels != 3) throw InvalidArgument("Grid3: channels must be 1 or 3");
    values_.assign(node_count() * channels, fill);
}

TrilinearStencil trilinear_stencil(const Grid3& grid, const Vec3& point) {
    TrilinearStencil s;
    for (int a = 0; a < 3; ++a)
        if (!(point[a] >= -1.0 && point[a] <= 1.0)) return s;  // NaN lands here too

    const int n = grid.resolution();
    const double scale = 0.5 * (n - 1);
    std::array<int, 3> cell{};
    for (int a = 0; a < 3; ++a) {
        const double u = (point[a] + 1.0) * scale;
        const int c = std::min(static_cast<int>(u), n - 2);
        cell[a] = c;
        s.frac[a] = u - c;
    }
    const auto [fx, fy, fz] = s.frac;
    int slot = 0;
    for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
                s.nodes[slot] = grid.node_index(cell[0] + dx, cell[1] + dy, cell[2] + dz);
                s.weights[slot] = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy) * (dz ? fz : 1.0 - fz);
                ++slot;
            }
    s.inside = true;
#ifndef NDEBUG
    double total = 0.0;
    for (double w : s.weights) {
        assert(w >= 0.0);
        total += w;
    }
    assert(std::abs(total - 1.0) < 1e-12);
#endif
    return s;
}

FieldSample sample_trilinear(const Grid3& grid, const Vec3& point) {
    FieldSample out;
    out.point = point;
    const TrilinearStencil s = trilinear_stencil(grid, point);
    if (!s.inside) return out;
    out.inside = true;
    const int ch = grid.channels();
    const auto values = grid.values();
    for (int n = 0; n < 8; ++n) {
        const std::size_t base = s.nodes[n] * ch;
        for (int c = 0; c < ch; ++c) out.value[c] += s.weights[n] * values[base + c];
    }
    return out;
}

SparseGridGradient sample_trilinear_backward(const Grid3& grid, const Vec3& point,
                                             std::span<const double> upstream) {
    SparseGridGradient g;
    const TrilinearStencil s = trilinear_stencil(grid, point);
    if (!s.inside) return g;
    const int ch = grid.channels();
    assert(static_cast<int>(upstream.size()) >= ch);
    for (int n = 0; n < 8; ++n)
        for (int c = 0; c < ch; ++c) {
            g.index[g.count] = s.nodes[n] * ch + c;
            g.value[g.count] = s.weights[n] * upstream[c];
            ++g.count;
        }
    return g;
}

std::array<Vec3, 3> grid_jacobian(const Grid3& grid, const Vec3& point) {
    std::array<Vec3, 3> jac{};
    const TrilinearStencil s = trilinear_stencil(grid, point);
    if (!s.inside) return jac;
    const auto v = grid.values();
    const int ch = grid.channels();
    const auto [fx, fy, fz] = s.frac;
    const double scale = 0.5 * (grid.resolution() - 1);
    // slot = dx + 2·dy + 4·dz, matching the stencil order
    for (int c = 0; c < ch; ++c) {
        auto corner = [&](int dx, int dy, int dz) { return double(v[s.nodes[dx + 2 * dy + 4 * dz] * ch + c]); };
        Vec3 g;
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b) {
                g.x += (a ? fy : 1 - fy) * (b ? fz : 1 - fz) * (corner(1, a, b) - corner(0, a, b));
                g.y += (a ? fx : 1 - fx) * (b ? fz : 1 - fz) * (corner(a, 1, b) - corner(a, 0, b));
                g.z += (a ? fx : 1 - fx) * (b ? fy : 1 - fy) * (corner(a, b, 1) - corner(a, b, 0));
            }
        jac[c] = g * scale;
    }
    return jac;
}

Vec3 grid_gradient_field(const Grid3& grid, const Vec3& point) {
    if (grid.channels() != 1) throw InvalidArgument("grid_gradient_field: scalar grid required");
    return grid_jacobian(grid, point)[0];
}

namespace {

static_assert(sizeof(float) == 4);

void write_le_floats(std::ostream& out, std::span<const float> values) {
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(values.data()),
                  static_cast<std::streamsize>(values.size() * sizeof(float)));
    } else {
        for (float f : values) {
            auto bits = std::bit_cast<std::uint32_t>(f);
            char b[4] = {char(bits), char(bits >> 8), char(bits >> 16), char(bits >> 24)};
            out.write(b, 4);
        }
    }
}

void read_le_floats(std::istream& in, std::span<float> values) {
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
    if constexpr (std::endian::native != std::endian::little) {
        for (float& f : values) {
            auto bits = std::bit_cast<std::uint32_t>(f);
            f = std::bit_cast<float>(__builtin_bswap32(bits));
        }
    }
}

}  // namespace

void write_grid(std::ostream& out, const Grid3& grid) {
    out << "GRID3 " << grid.resolution() << ' ' << grid.channels() << '\n';
    write_le_floats(out, grid.values());
}

Grid3 read_grid(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw IoError("GRID3: missing header");
    std::istringstream header(line);
    std::string magic;
    int res = 0, ch = 0;
    if (!(header >> magic >> res >> ch) || magic != "GRID3") throw IoError("GRID3: malformed header '" + line + "'");
    Grid3 grid(res, ch);
    read_le_floats(in, grid.values());
    if (!in) throw IoError("GRID3: truncated payload");
    return grid;
}

void save_grid(const std::filesystem::path& path, const Grid3& grid) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    write_grid(out, grid);
    if (!out) throw IoError("write failed: " + path.string());
}

Grid3 load_grid(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return read_grid(in);
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

}  // namespace distill3d
