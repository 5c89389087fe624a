// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "distill3d/math.hpp"

namespace distill3d {

/// Dense voxel field over the fixed cube [-1,1]^3 with `resolution` nodes per
/// axis. Values are stored row-major, x fastest, channels interleaved per node.
/// Density grids hold raw pre-activation values; the renderer applies softplus.
class Grid3 {
public:
    Grid3() = default;
    Grid3(int resolution, int channels, float fill = 0.0f);

    int resolution() const noexcept { return resolution_; }
    int channels() const noexcept { return channels_; }
    /// Distance between neighbouring nodes.
    double spacing() const noexcept { return 2.0 / (resolution_ - 1); }
    std::size_t node_count() const noexcept {
        return static_cast<std::size_t>(resolution_) * resolution_ * resolution_;
    }

    std::size_t node_index(int i, int j, int k) const noexcept {
        return (static_cast<std::size_t>(k) * resolution_ + j) * resolution_ + i;
    }
    Vec3 node_position(int i, int j, int k) const noexcept {
        const double h = spacing();
        return {-1.0 + h * i, -1.0 + h * j, -1.0 + h * k};
    }

    float& at(int i, int j, int k, int c = 0) { return values_[node_index(i, j, k) * channels_ + c]; }
    float at(int i, int j, int k, int c = 0) const { return values_[node_index(i, j, k) * channels_ + c]; }

    std::span<float> values() noexcept { return values_; }
    std::span<const float> values() const noexcept { return values_; }

    /// Fill every node from a function of its position; `fn` returns one value per channel.
    template <class Fn>
    void fill_from(Fn&& fn) {
        for (int k = 0; k < resolution_; ++k)
            for (int j = 0; j < resolution_; ++j)
                for (int i = 0; i < resolution_; ++i) {
                    const auto v = fn(node_position(i, j, k));
                    for (int c = 0; c < channels_; ++c) at(i, j, k, c) = static_cast<float>(v[c]);
                }
    }

    bool operator==(const Grid3&) const = default;

private:
    int resolution_ = 0;
    int channels_ = 0;
    std::vector<float> values_;
};

struct FieldSample {
    std::array<double, 3> value{0.0, 0.0, 0.0};  // first `channels` entries used
    Vec3 point;
    bool inside = false;
};

/// The eight nodes surrounding a point and their trilinear weights.
struct TrilinearStencil {
    std::array<std::size_t, 8> nodes{};
    std::array<double, 8> weights{};
    /// Fractional position inside the cell and the cell origin, used for the spatial gradient.
    std::array<double, 3> frac{};
    bool inside = false;
};

/// Sparse gradient over at most 8 nodes × channels stored grid values.
struct SparseGridGradient {
    std::array<std::size_t, 24> index{};
    std::array<double, 24> value{};
    int count = 0;

    void accumulate_into(std::span<double> dense) const {
        for (int n = 0; n < count; ++n) dense[index[n]] += value[n];
    }
};

TrilinearStencil trilinear_stencil(const Grid3& grid, const Vec3& point);

FieldSample sample_trilinear(const Grid3& grid, const Vec3& point);

/// Adjoint of sample_trilinear w.r.t. the stored values; `upstream` has one entry per channel.
SparseGridGradient sample_trilinear_backward(const Grid3& grid, const Vec3& point,
                                             std::span<const double> upstream);

/// Spatial derivative of the trilinear interpolant. Scalar grids only; zero outside the cube.
Vec3 grid_gradient_field(const Grid3& grid, const Vec3& point);

/// Per-channel spatial derivatives (row c = gradient of channel c). Unused rows are zero.
std::array<Vec3, 3> grid_jacobian(const Grid3& grid, const Vec3& point);

// GRID3 checkpoint: text header `GRID3 <res> <channels>\n` then little-endian float32 values.
void write_grid(std::ostream& out, const Grid3& grid);
Grid3 read_grid(std::istream& in);
void save_grid(const std::filesystem::path& path, const Grid3& grid);
Grid3 load_grid(const std::filesystem::path& path);

}  // namespace distill3d
