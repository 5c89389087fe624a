// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <vector>

#include "distill3d/camera.hpp"
#include "distill3d/image.hpp"

namespace distill3d {

/// Per-patch per-channel means of an image. Patches are ordered column-major over
/// the image (patch index = px·P + py), channels innermost: index = patch·3 + c.
struct ImagePromptEmbedding {
    int patches = 8;  // P per axis
    std::vector<double> vector;

    std::size_t expected_length() const { return std::size_t(3) * patches * patches; }
    bool operator==(const ImagePromptEmbedding&) const = default;
};

/// y_n,ran − y_n,def. `view` records the random viewpoint it was built for so a
/// stale difference can be rejected by the texture rule.
struct GeometryPromptDifference {
    int patches = 8;
    std::vector<double> vector;
    std::optional<CameraPose> view;
};

/// Throws InvalidArgument when the image dimensions are not divisible by `patches`.
ImagePromptEmbedding embed_image(const Image& image, int patches = 8);

GeometryPromptDifference geometry_prompt_difference(const ImagePromptEmbedding& y_ran,
                                                    const ImagePromptEmbedding& y_def);

/// y_rgb + δ_geo, elementwise, no clamping.
ImagePromptEmbedding compensate(const ImagePromptEmbedding& y_rgb, const GeometryPromptDifference& delta);

/// Constant-per-patch image of size width×height whose embedding is `embedding`
/// (a right inverse of embed_image). Used as the image-prompt oracle's decoder.
Image decode_embedding(const ImagePromptEmbedding& embedding, int width, int height);

/// Normal image from an RGB image: luminance as height field, central differences,
/// n = normalize(−g_x, −g_y, 1), output (n+1)/2. Image +y points up.
Image normal_from_rgb(const Image& image);

}  // namespace distill3d
