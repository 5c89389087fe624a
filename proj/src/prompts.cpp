// SPDX-License-Identifier: Apache-2.0
#include "distill3d/prompts.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "distill3d/errors.hpp"

namespace distill3d {

ImagePromptEmbedding embed_image(const Image& image, int patches) {
    if (patches < 1 || image.width % patches != 0 || image.height % patches != 0)
        throw InvalidArgument("embed_image: " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                              " not divisible by P=" + std::to_string(patches));
    const int pw = image.width / patches, ph = image.height / patches;
    ImagePromptEmbedding e;
    e.patches = patches;
    e.vector.assign(e.expected_length(), 0.0);
    const double inv = 1.0 / (double(pw) * ph);
    for (int px = 0; px < patches; ++px)
        for (int py = 0; py < patches; ++py) {
            const std::size_t base = std::size_t(px * patches + py) * 3;
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int y = py * ph; y < (py + 1) * ph; ++y)
                    for (int x = px * pw; x < (px + 1) * pw; ++x) acc += image.at(x, y, c);
                e.vector[base + c] = acc * inv;
            }
        }
    return e;
}

GeometryPromptDifference geometry_prompt_difference(const ImagePromptEmbedding& y_ran,
                                                    const ImagePromptEmbedding& y_def) {
    if (y_ran.vector.size() != y_def.vector.size() || y_ran.patches != y_def.patches)
        throw InvalidArgument("geometry_prompt_difference: embedding lengths differ");
    GeometryPromptDifference d;
    d.patches = y_ran.patches;
    d.vector.resize(y_ran.vector.size());
    for (std::size_t i = 0; i < d.vector.size(); ++i) d.vector[i] = y_ran.vector[i] - y_def.vector[i];
    return d;
}

ImagePromptEmbedding compensate(const ImagePromptEmbedding& y_rgb, const GeometryPromptDifference& delta) {
    if (y_rgb.vector.size() != delta.vector.size())
        throw InvalidArgument("compensate: embedding and difference lengths differ");
    ImagePromptEmbedding out = y_rgb;
    for (std::size_t i = 0; i < out.vector.size(); ++i) out.vector[i] += delta.vector[i];
    return out;
}

Image decode_embedding(const ImagePromptEmbedding& embedding, int width, int height) {
    const int P = embedding.patches;
    if (embedding.vector.size() != embedding.expected_length())
        throw InvalidArgument("decode_embedding: vector length does not match patch count");
    if (width % P != 0 || height % P != 0) throw InvalidArgument("decode_embedding: size not divisible by P");
    const int pw = width / P, ph = height / P;
    Image img(width, height);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const std::size_t base = std::size_t((x / pw) * P + (y / ph)) * 3;
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = embedding.vector[base + c];
        }
    return img;
}

Image normal_from_rgb(const Image& image) {
    const int W = image.width, H = image.height;
    std::vector<double> lum(std::size_t(W) * H);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            lum[std::size_t(y) * W + x] = 0.299 * image.at(x, y, 0) + 0.587 * image.at(x, y, 1) + 0.114 * image.at(x, y, 2);
    auto L = [&](int x, int y) {
        x = std::clamp(x, 0, W - 1);
        y = std::clamp(y, 0, H - 1);
        return lum[std::size_t(y) * W + x];
    };
    Image out(W, H);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const double gx = 0.5 * (L(x + 1, y) - L(x - 1, y));
            const double gy = 0.5 * (L(x, y - 1) - L(x, y + 1));  // rows grow downward
            const Vec3 n = normalized(Vec3{-gx, -gy, 1.0});
            out.set(x, y, {0.5 * n.x + 0.5, 0.5 * n.y + 0.5, 0.5 * n.z + 0.5});
        }
    return out;
}

}  // namespace distill3d
