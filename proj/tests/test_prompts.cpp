// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "distill3d/errors.hpp"
#include "distill3d/prompts.hpp"
#include "oracles.hpp"

using namespace distill3d;

TEST_CASE("embedding of a constant image") {
    const auto y = embed_image(Image::filled(16, 16, {0.1, 0.2, 0.3}), 8);
    REQUIRE(y.vector.size() == 192);
    for (std::size_t i = 0; i < y.vector.size(); ++i) CHECK(y.vector[i] == doctest::Approx(0.1 * (1 + i % 3)));
    CHECK_THROWS_AS(embed_image(Image(15, 16), 8), InvalidArgument);
}

TEST_CASE("left black, right white with two patches") {
    Image img(4, 4, 0.0);
    for (int y = 0; y < 4; ++y)
        for (int x = 2; x < 4; ++x) img.set(x, y, {1, 1, 1});
    const auto e = embed_image(img, 2);
    // Column-major patches: (0,0), (0,1), (1,0), (1,1).
    const std::vector<double> expect{0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1};
    CHECK(e.vector == expect);
}

TEST_CASE("embedding is linear") {
    Rng rng(1);
    const Image a = oracle::random_image(rng, 16, 16);
    const Image b = oracle::random_image(rng, 16, 16);
    Image mix(16, 16);
    for (std::size_t i = 0; i < mix.pixels.size(); ++i) mix.pixels[i] = 0.25 * a.pixels[i] + 0.5 * b.pixels[i];
    const auto ea = embed_image(a, 4), eb = embed_image(b, 4), em = embed_image(mix, 4);
    for (std::size_t i = 0; i < em.vector.size(); ++i)
        CHECK(em.vector[i] == doctest::Approx(0.25 * ea.vector[i] + 0.5 * eb.vector[i]).epsilon(1e-14));
}

TEST_CASE("embedding is resolution covariant") {
    Rng rng(2);
    const Image a = oracle::random_image(rng, 16, 16);
    Image small(4, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
            for (int c = 0; c < 3; ++c) {
                double s = 0.0;
                for (int dy = 0; dy < 4; ++dy)
                    for (int dx = 0; dx < 4; ++dx) s += a.at(4 * x + dx, 4 * y + dy, c);
                small.at(x, y, c) = s / 16.0;
            }
    const auto big = embed_image(a, 4), down = embed_image(small, 4);
    for (std::size_t i = 0; i < big.vector.size(); ++i) CHECK(big.vector[i] == doctest::Approx(down.vector[i]).epsilon(1e-14));
}

TEST_CASE("geometry prompt difference and compensation") {
    const auto hi = embed_image(Image(8, 8, 0.8), 4), lo = embed_image(Image(8, 8, 0.3), 4);
    for (double v : geometry_prompt_difference(hi, lo).vector) CHECK(v == doctest::Approx(0.5));
    for (double v : geometry_prompt_difference(hi, hi).vector) CHECK(v == 0.0);

    Rng rng(3);
    const auto a = embed_image(oracle::random_image(rng, 8, 8), 4);
    const auto b = embed_image(oracle::random_image(rng, 8, 8), 4);
    const auto ab = geometry_prompt_difference(a, b), ba = geometry_prompt_difference(b, a);
    for (std::size_t i = 0; i < ab.vector.size(); ++i) CHECK(ab.vector[i] == -ba.vector[i]);

    CHECK(compensate(a, geometry_prompt_difference(b, b)) == a);
    const auto back = compensate(compensate(a, ab), ba);
    for (std::size_t i = 0; i < a.vector.size(); ++i) CHECK(back.vector[i] == doctest::Approx(a.vector[i]).epsilon(1e-15));

    const auto other = embed_image(Image(8, 8), 2);
    CHECK_THROWS_AS(geometry_prompt_difference(a, other), InvalidArgument);
    CHECK_THROWS_AS(compensate(other, ab), InvalidArgument);
}

TEST_CASE("compensation matches image-space arithmetic") {
    Rng rng(4);
    const Image a = oracle::random_image(rng, 16, 16), b = oracle::random_image(rng, 16, 16),
                c = oracle::random_image(rng, 16, 16);
    Image abc(16, 16);
    for (std::size_t i = 0; i < abc.pixels.size(); ++i) abc.pixels[i] = a.pixels[i] + b.pixels[i] - c.pixels[i];
    const auto lhs = compensate(embed_image(a, 8), geometry_prompt_difference(embed_image(b, 8), embed_image(c, 8)));
    const auto rhs = embed_image(abc, 8);
    for (std::size_t i = 0; i < lhs.vector.size(); ++i) CHECK(std::abs(lhs.vector[i] - rhs.vector[i]) <= 1e-12);
}

TEST_CASE("decode_embedding is a right inverse") {
    Rng rng(5);
    const auto y = embed_image(oracle::random_image(rng, 16, 16), 4);
    const auto again = embed_image(decode_embedding(y, 32, 32), 4);
    for (std::size_t i = 0; i < y.vector.size(); ++i) CHECK(again.vector[i] == doctest::Approx(y.vector[i]).epsilon(1e-14));
}

TEST_CASE("normal_from_rgb") {
    for (const Rgb& n : {Rgb{0.5, 0.5, 1.0}}) {
        const Image flat = normal_from_rgb(Image(8, 8, 0.3));
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x)
                for (int c = 0; c < 3; ++c) CHECK(flat.at(x, y, c) == doctest::Approx(n[c]));
    }

    // Luminance ramp: slope 0.1 per pixel along +x.
    Image ramp(8, 8);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) ramp.set(x, y, {0.1 * x, 0.1 * x, 0.1 * x});
    const Image n = normal_from_rgb(ramp);
    const double len = std::sqrt(0.01 + 1.0);
    for (int y = 1; y < 7; ++y)
        for (int x = 1; x < 7; ++x) {
            CHECK(n.at(x, y, 0) == doctest::Approx((-0.1 / len + 1) / 2));
            CHECK(n.at(x, y, 1) == doctest::Approx(0.5));
            CHECK(n.at(x, y, 2) == doctest::Approx((1.0 / len + 1) / 2));
        }

    Rng rng(6);
    const Image r = normal_from_rgb(oracle::random_image(rng, 12, 12, 0, 1));
    for (std::size_t p = 0; p < r.pixel_count(); ++p) {
        double s = 0.0;
        for (int c = 0; c < 3; ++c) s += std::pow(2 * r.pixels[3 * p + c] - 1, 2);
        CHECK(std::abs(std::sqrt(s) - 1.0) <= 1e-4);
    }
}
