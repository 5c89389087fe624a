// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace distill3d {

using Rgb = std::array<double, 3>;

/// Interleaved RGB image, row-major with row 0 at the top.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<double> pixels;  // width·height·3

    Image() = default;
    Image(int w, int h, double fill = 0.0) : width(w), height(h), pixels(std::size_t(w) * h * 3, fill) {}
    static Image filled(int w, int h, const Rgb& rgb);

    static constexpr int channels = 3;
    std::size_t pixel_count() const noexcept { return std::size_t(width) * height; }
    std::size_t offset(int x, int y) const noexcept { return (std::size_t(y) * width + x) * 3; }
    double& at(int x, int y, int c) { return pixels[offset(x, y) + c]; }
    double at(int x, int y, int c) const { return pixels[offset(x, y) + c]; }
    Rgb rgb(int x, int y) const {
        const std::size_t o = offset(x, y);
        return {pixels[o], pixels[o + 1], pixels[o + 2]};
    }
    void set(int x, int y, const Rgb& c) {
        const std::size_t o = offset(x, y);
        pixels[o] = c[0];
        pixels[o + 1] = c[1];
        pixels[o + 2] = c[2];
    }
    bool same_shape(const Image& o) const noexcept { return width == o.width && height == o.height; }
    bool operator==(const Image&) const = default;
};

double mse(const Image& a, const Image& b);
/// Peak signal-to-noise ratio for unit-range images.
double psnr(const Image& a, const Image& b);

/// 8-bit RGB PNG. Values are clamped to [0,1] and rounded.
void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

}  // namespace distill3d
