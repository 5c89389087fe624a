// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>

#include "distill3d/distill.hpp"
#include "distill3d/errors.hpp"
#include "distill3d/optim.hpp"
#include "oracles.hpp"

using namespace distill3d;

namespace {

struct ThrowingDenoiser final : Denoiser {
    Tensor predict(const Tensor&, int, const DenoiserCondition&) const override {
        throw ProtocolError("bad_shape", "rejected");
    }
    DenoiserKind kind() const override { return DenoiserKind::Pretrain; }
};

struct MeshScene {
    TetGrid grid;
    SurfaceMesh mesh;
    Grid3 texture;
    CameraPose cam;
};

MeshScene sphere_scene(int res, int px, double az = 20.0) {
    MeshScene s{build_tet_grid(res), {}, Grid3(6, 3), look_at_origin(az, 15, 2.2, 50, px, px)};
    s.grid.set_sdf([](const Vec3& p) { return norm(p) - 0.55; });
    s.mesh = marching_tets(s.grid);
    Rng rng(3);
    for (float& v : s.texture.values()) v = float(rng.uniform(0.2, 0.8));
    return s;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

}  // namespace

TEST_CASE("gradient set") {
    GradientSet g;
    g.add("a", 2) = {3.0, 0.0};
    g.add("b", 1)[0] = 4.0;
    CHECK(g.global_norm() == doctest::Approx(5.0));
    g.scale(0.5);
    CHECK((*g.find("a"))[0] == 1.5);
    CHECK(g.find("missing") == nullptr);
}

TEST_CASE("SDS fixed point gives an exactly zero gradient") {
    Rng rng(1);
    const Image params = oracle::random_image(rng, 8, 8, 0, 1);
    const ImageRenderState state(params);
    DistillOptions opt;
    const DeltaTargetDenoiser d(opt.schedule, opt.codec.encode(params));
    for (int i = 0; i < 20; ++i) {
        const DistillStep s = sds_grad(state, d, {}, opt, rng);
        CHECK(s.gradients.global_norm() <= 1e-6);
        CHECK(s.report.rule == "sds");
    }
}

TEST_CASE("SDS upstream closed form at alpha_bar 0.64") {
    DistillOptions opt;
    opt.schedule = NoiseSchedule({0.2, 0.2});
    opt.timesteps = {0.9, 1.0, Weighting::Unit};
    const Image params(2, 2, 0.3);
    const ImageRenderState state(params);
    const DeltaTargetDenoiser d(opt.schedule, Tensor(3, 2, 2, 0.0));
    Rng rng(2);
    const DistillStep s = sds_grad(state, d, {}, opt, rng);
    REQUIRE(s.report.t == 2);
    for (double v : *s.gradients.find("image")) CHECK(v == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("SDS with a delta oracle is exact gradient descent on the weighted latent gap") {
    Rng rng(3);
    const Image params = oracle::random_image(rng, 8, 8, 0, 1);
    const ImageRenderState state(params);
    DistillOptions opt;
    opt.codec = Codec::avgpool(2);
    const Image target_img = oracle::random_image(rng, 8, 8, 0, 1);
    const Tensor target = opt.codec.encode(target_img);
    const DeltaTargetDenoiser d(opt.schedule, target);
    const Tensor z = opt.codec.encode(params);
    for (int i = 0; i < 50; ++i) {
        const DistillStep s = sds_grad(state, d, {}, opt, rng);
        const double ab = opt.schedule.alpha_bar(s.report.t);
        const double k = s.report.weight * std::sqrt(ab / (1 - ab));
        Tensor gap = z;
        for (std::size_t j = 0; j < gap.data.size(); ++j) gap.data[j] = k * (z.data[j] - target.data[j]);
        const Image expect = opt.codec.encode_adjoint(gap);
        const auto& g = *s.gradients.find("image");
        double scale = 1.0;
        if (s.report.clipped) scale = opt.clip_norm / s.report.grad_norms[0].second;
        for (std::size_t j = 0; j < g.size(); ++j) CHECK(std::abs(g[j] - scale * expect.pixels[j]) <= 1e-6);
    }
}

TEST_CASE("200 SDS steps on an identity generator reach the target") {
    Rng rng(4);
    Image params(8, 8, 0.5);
    const Image target_img = oracle::random_image(rng, 8, 8, 0, 1);
    DistillOptions opt;
    const DeltaTargetDenoiser d(opt.schedule, opt.codec.encode(target_img));
    for (int i = 0; i < 200; ++i) {
        const ImageRenderState state(params);
        const DistillStep s = sds_grad(state, d, {}, opt, rng);
        const auto& g = *s.gradients.find("image");
        for (std::size_t j = 0; j < g.size(); ++j) params.pixels[j] -= g[j];
    }
    CHECK(mse(params, target_img) < 1e-4);
}

TEST_CASE("gradients are clipped to the global norm") {
    DistillOptions opt;
    opt.clip_norm = 0.01;
    Rng rng(5);
    const Image params(8, 8, 1.0);
    const DeltaTargetDenoiser d(opt.schedule, Tensor(3, 8, 8, -1.0));
    const DistillStep s = sds_grad(ImageRenderState(params), d, {}, opt, rng);
    CHECK(s.report.clipped);
    CHECK(s.gradients.global_norm() == doctest::Approx(0.01));
    CHECK(s.report.grad_norms.at(0).second > 0.01);
    CHECK(s.report.duration_s > 0.0);
}

TEST_CASE("denoiser failures carry rule and timestep context") {
    DistillOptions opt;
    Rng rng(6);
    const Image params(4, 4, 0.5);
    try {
        sds_grad(ImageRenderState(params), ThrowingDenoiser{}, {}, opt, rng);
        FAIL("expected ProtocolError");
    } catch (const ProtocolError& e) {
        CHECK(e.code() == "bad_shape");
        CHECK(std::string(e.what()).find("sds (t=") != std::string::npos);
    }
}

TEST_CASE("VSD starts with an exactly zero gradient") {
    DistillOptions opt;
    Rng rng(7);
    const Image params = oracle::random_image(rng, 8, 8, 0, 1);
    const ImageRenderState state(params, look_at_origin(10, 10, 2.2, 50, 8, 8));
    auto base = std::make_shared<DeltaTargetDenoiser>(opt.schedule, Tensor(3, 8, 8, 0.2));
    ResidualScoreModel phi(base, Tensor(3, 8, 8), {32, 8, 1e-3, 1});
    const DistillStep first = vsd_grad(state, phi, {}, opt, rng);
    for (double v : *first.gradients.find("image")) CHECK(v == 0.0);
    CHECK(first.report.residual_loss.has_value());

    SUBCASE("and stays zero when the residual model is never trained") {
        ResidualScoreModel frozen(base, Tensor(3, 8, 8), {32, 8, 1e-3, 1});
        const auto hash = frozen.state_hash();
        for (int i = 0; i < 30; ++i) {
            const DistillStep s = vsd_grad(state, frozen, {}, opt, rng, {0});
            CHECK(s.gradients.global_norm() == 0.0);
            CHECK_FALSE(s.report.residual_loss.has_value());
        }
        CHECK(frozen.state_hash() == hash);
    }
    SUBCASE("and becomes non-zero once the residual model has trained") {
        for (int i = 0; i < 10; ++i) vsd_grad(state, phi, {}, opt, rng);
        CHECK(vsd_grad(state, phi, {}, opt, rng).gradients.global_norm() > 0.0);
    }
}

TEST_CASE("distillation rules never update denoiser state") {
    DistillOptions opt;
    Rng rng(8);
    const Image params = oracle::random_image(rng, 8, 8, 0, 1);
    auto base = std::make_shared<DeltaTargetDenoiser>(opt.schedule, Tensor(3, 8, 8, 0.2));
    ResidualScoreModel phi(base, Tensor(3, 8, 8), {32, 8, 1e-3, 1});
    for (int i = 0; i < 5; ++i) vsd_grad(ImageRenderState(params), phi, {}, opt, rng);
    const auto hash = phi.state_hash();
    DenoiserCondition cond;
    cond.camera = CameraPose{};
    for (int i = 0; i < 10; ++i) sds_grad(ImageRenderState(params), phi, cond, opt, rng);
    CHECK(phi.state_hash() == hash);
}

TEST_CASE("VSD costs more per step than SDS") {
    DistillOptions opt;
    Rng rng(9);
    const Image params = oracle::random_image(rng, 32, 32, 0, 1);
    const ImageRenderState state(params, look_at_origin(10, 10, 2.2, 50, 32, 32));
    auto base = std::make_shared<DeltaTargetDenoiser>(opt.schedule, Tensor(3, 32, 32, 0.2));
    ResidualScoreModel phi(base, Tensor(3, 32, 32));
    std::vector<double> sds, vsd;
    for (int i = 0; i < 50; ++i) {
        sds.push_back(sds_grad(state, *base, {}, opt, rng).report.duration_s);
        vsd.push_back(vsd_grad(state, phi, {}, opt, rng).report.duration_s);
    }
    CHECK(median(vsd) > median(sds));
}

TEST_CASE("zero123 SDS") {
    DistillOptions opt;
    Grid3 density(8, 1), color(8, 3);
    Rng rng(10);
    for (float& v : density.values()) v = float(rng.uniform(-1, 2));
    for (float& v : color.values()) v = float(rng.uniform(0, 1));
    volume::RenderSettings st;
    st.steps = 24;
    const CameraPose def = look_at_origin(0, 15, 2.2, 50, 16, 16);
    const CameraPose view = look_at_origin(60, 20, 2.2, 50, 16, 16);
    const RelativePose rel = solve_relative(def, view);
    const VolumeRenderState state(density, color, view, st);
    const Image ref(16, 16, 0.5);

    SUBCASE("rejects a render from another pose") {
        CHECK_THROWS_AS(zero123_sds_grad(state, DeltaTargetDenoiser(opt.schedule, Tensor(3, 16, 16)), ref,
                                         RelativePose::identity(), def, opt, rng),
                        InvalidArgument);
    }
    SUBCASE("zero gradient at the fixed point") {
        const DeltaTargetDenoiser d(opt.schedule, opt.codec.encode(state.image()), DenoiserKind::Zero123);
        const DistillStep s = zero123_sds_grad(state, d, ref, rel, def, opt, rng);
        CHECK(s.gradients.global_norm() <= 1e-6);
        CHECK(s.report.rule == "zero123_sds");
    }
    SUBCASE("zero gradient on grid nodes no ray reaches") {
        const CameraPose narrow = look_at_origin(0, 0, 2.2, 10, 8, 8);
        const RelativePose r = solve_relative(def, narrow);
        const VolumeRenderState s2(density, color, narrow, st);
        const DeltaTargetDenoiser d(opt.schedule, Tensor(3, 8, 8, 0.0), DenoiserKind::Zero123);
        const DistillStep s = zero123_sds_grad(s2, d, ref, r, def, opt, rng);
        const auto& gd = *s.gradients.find("density");
        const double reach = std::tan(5.0 * M_PI / 180.0) * 3.2 + 2 * density.spacing();
        int far = 0, near_nonzero = 0;
        for (int k = 0; k < 8; ++k)
            for (int j = 0; j < 8; ++j)
                for (int i = 0; i < 8; ++i) {
                    const Vec3 p = density.node_position(i, j, k);
                    const double off_axis = std::hypot(p.x, p.y);
                    const double g = gd[density.node_index(i, j, k)];
                    if (off_axis > reach) {
                        ++far;
                        CHECK(g == 0.0);
                    } else if (g != 0.0) {
                        ++near_nonzero;
                    }
                }
        CHECK(far > 0);
        CHECK(near_nonzero > 0);
    }
}

TEST_CASE("IPSD geometry rule") {
    MeshScene s = sphere_scene(12, 16);
    DistillOptions opt;
    Rng rng(11);
    const MeshRenderState normal(s.grid, s.mesh, s.texture, s.cam, {1, 1, 1}, MeshRenderState::Channel::Normal);
    const MeshRenderState rgb(s.grid, s.mesh, s.texture, s.cam, {1, 1, 1}, MeshRenderState::Channel::Rgb);
    const auto y_n = embed_image(normal.image(), 4);

    CHECK_THROWS_AS(ipsd_geo_grad(rgb, ImagePromptOracle(opt.schedule), y_n, {}, opt, rng), InvalidArgument);

    const DeltaTargetDenoiser fixed(opt.schedule, opt.codec.encode(normal.image()), DenoiserKind::ImagePrompt);
    const DistillStep zero = ipsd_geo_grad(normal, fixed, y_n, {}, opt, rng);
    CHECK(zero.gradients.global_norm() <= 1e-6);

    const DistillStep step = ipsd_geo_grad(normal, ImagePromptOracle(opt.schedule), y_n, {}, opt, rng);
    CHECK(step.report.rule == "ipsd_geo");
    REQUIRE(step.gradients.find("sdf") != nullptr);
    REQUIRE(step.gradients.find("deform") != nullptr);
    CHECK(step.gradients.find("texture") == nullptr);
    CHECK(step.gradients.global_norm() > 0.0);

    // An optimizer step followed by the projection keeps ΔV in its box.
    Adam opt_d(AdamConfig{1.0});
    std::vector<double> flat(s.grid.deform.size() * 3);
    for (int i = 0; i < 5; ++i) {
        opt_d.step(std::span<double>(flat), *step.gradients.find("deform"));
        for (std::size_t v = 0; v < s.grid.deform.size(); ++v) s.grid.deform[v] = {flat[3 * v], flat[3 * v + 1], flat[3 * v + 2]};
        s.grid.clamp_deformation();
    }
    for (const Vec3& d : s.grid.deform)
        CHECK(std::max({std::abs(d.x), std::abs(d.y), std::abs(d.z)}) <= s.grid.max_deform() + 1e-15);
}

TEST_CASE("empty mesh is degenerate geometry") {
    TetGrid grid = build_tet_grid(8);
    grid.set_sdf([](const Vec3&) { return 1.0; });
    const SurfaceMesh empty = marching_tets(grid);
    CHECK_THROWS_AS(MeshRenderState(grid, empty, Grid3(4, 3), look_at_origin(0, 0, 2.2, 50, 8, 8), {1, 1, 1},
                                    MeshRenderState::Channel::Normal),
                    GeometryError);
}

TEST_CASE("IPSD texture rule") {
    MeshScene s = sphere_scene(12, 16);
    DistillOptions opt;
    const ImagePromptOracle ip(opt.schedule);
    const MeshRenderState rgb(s.grid, s.mesh, s.texture, s.cam, {1, 1, 1}, MeshRenderState::Channel::Rgb);
    const MeshRenderState normal(s.grid, s.mesh, s.texture, s.cam, {1, 1, 1}, MeshRenderState::Channel::Normal);
    const auto y_rgb = embed_image(Image::filled(16, 16, {0.9, 0.2, 0.1}), 4);
    Rng rng(12);

    CHECK_THROWS_AS(ipsd_tex_grad(normal, ip, y_rgb, {}, {}, opt, rng), InvalidArgument);

    SUBCASE("stale geometry differences are rejected") {
        GeometryPromptDifference stale = geometry_prompt_difference(y_rgb, y_rgb);
        stale.view = look_at_origin(50, 15, 2.2, 50, 16, 16);
        CHECK_THROWS_AS(ipsd_tex_grad(rgb, ip, y_rgb, stale, {}, opt, rng), StaleStateError);
        GeometryPromptDifference unbound{4, std::vector<double>(48, 0.1), std::nullopt};
        CHECK_THROWS_AS(ipsd_tex_grad(rgb, ip, y_rgb, unbound, {}, opt, rng), StaleStateError);
    }
    SUBCASE("zero difference conditions on y_rgb alone") {
        GeometryPromptDifference bound = geometry_prompt_difference(y_rgb, y_rgb);
        bound.view = rgb.camera();
        const GeometryPromptDifference unbound{4, std::vector<double>(48, 0.0), std::nullopt};
        Rng a(5), b(5);
        const DistillStep sa = ipsd_tex_grad(rgb, ip, y_rgb, bound, {}, opt, a);
        const DistillStep sb = ipsd_tex_grad(rgb, ip, y_rgb, unbound, {}, opt, b);
        REQUIRE(sa.gradients.groups.size() == sb.gradients.groups.size());
        for (std::size_t i = 0; i < sa.gradients.groups.size(); ++i)
            CHECK(sa.gradients.groups[i].values == sb.gradients.groups[i].values);
        CHECK(compensate(y_rgb, bound) == y_rgb);
    }
    SUBCASE("gradient groups follow the geometry flag") {
        opt.clip_norm = 0.0;
        Rng a(6), b(6);
        const DistillStep with = ipsd_tex_grad(rgb, ip, y_rgb, {4, std::vector<double>(48, 0.0), std::nullopt}, {}, opt, a);
        CHECK(with.gradients.find("texture") != nullptr);
        CHECK(with.gradients.find("sdf") != nullptr);
        const MeshRenderState tex_only(s.grid, s.mesh, s.texture, s.cam, {1, 1, 1}, MeshRenderState::Channel::Rgb, false);
        const DistillStep without =
            ipsd_tex_grad(tex_only, ip, y_rgb, {4, std::vector<double>(48, 0.0), std::nullopt}, {}, opt, b);
        CHECK(without.gradients.find("sdf") == nullptr);
        CHECK(*without.gradients.find("texture") == *with.gradients.find("texture"));
    }
    SUBCASE("texture gradient is a descent direction for the prompt gap") {
        const Tensor target = ImagePromptOracle::decode_target(y_rgb, opt.codec.latent_shape(16, 16));
        auto gap = [&](const Grid3& tex) {
            const auto out = raster::rasterize(s.mesh, tex, s.cam, {1, 1, 1});
            return tensor_mse(opt.codec.encode(out.rgb), target);
        };
        const double before = gap(s.texture);
        const GeometryPromptDifference zero{4, std::vector<double>(48, 0.0), std::nullopt};
        for (int trial = 0; trial < 10; ++trial) {
            const DistillStep st = ipsd_tex_grad(rgb, ip, y_rgb, zero, {}, opt, rng);
            const auto& g = *st.gradients.find("texture");
            Grid3 probe = s.texture;
            for (std::size_t i = 0; i < g.size(); ++i) probe.values()[i] -= float(1e-2 * g[i]);
            CHECK(gap(probe) < before);
        }
    }
}
