// SPDX-License-Identifier: Apache-2.0
#include "distill3d/distill.hpp"

#include <chrono>
#include <cmath>

#include "distill3d/errors.hpp"

namespace distill3d {

std::vector<double>* GradientSet::find(std::string_view group) {
    for (auto& g : groups)
        if (g.group == group) return &g.values;
    return nullptr;
}

const std::vector<double>* GradientSet::find(std::string_view group) const {
    for (const auto& g : groups)
        if (g.group == group) return &g.values;
    return nullptr;
}

std::vector<double>& GradientSet::add(std::string group, std::size_t size) {
    if (find(group)) throw InvalidArgument("GradientSet: duplicate group " + group);
    groups.push_back({std::move(group), std::vector<double>(size, 0.0)});
    return groups.back().values;
}

double GradientSet::global_norm() const {
    double s = 0.0;
    for (const auto& g : groups) s += simd::sum_squares(g.values);
    return std::sqrt(s);
}

void GradientSet::scale(double s) {
    for (auto& g : groups)
        for (double& v : g.values) v *= s;
}

// ---------------------------------------------------------------------------

ImageRenderState::ImageRenderState(const Image& params, const CameraPose& cam) : image_(&params), camera_(cam) {}

GradientSet ImageRenderState::backward(const Image& image_grad) const {
    if (!image_grad.same_shape(*image_)) throw InvalidArgument("ImageRenderState: gradient shape mismatch");
    GradientSet g;
    g.add("image", 0) = image_grad.pixels;
    return g;
}

VolumeRenderState::VolumeRenderState(const Grid3& density, const Grid3& color, const CameraPose& cam,
                                     const volume::RenderSettings& settings)
    : density_(&density), color_(&color), camera_(cam), settings_(settings),
      image_(volume::render(density, color, cam, settings)) {}

GradientSet VolumeRenderState::backward(const Image& image_grad) const {
    auto vg = volume::render_backward(*density_, *color_, camera_, settings_, image_grad);
    GradientSet g;
    g.add("density", 0) = std::move(vg.density);
    g.add("color", 0) = std::move(vg.color);
    return g;
}

MeshRenderState::MeshRenderState(const TetGrid& grid, const SurfaceMesh& mesh, const Grid3& texture,
                                 const CameraPose& cam, const Rgb& background, Channel channel,
                                 bool geometry_gradients, int workers)
    : grid_(&grid), mesh_(&mesh), texture_(&texture), channel_(channel), geometry_(geometry_gradients) {
    if (mesh.empty()) throw GeometryError("degenerate geometry: extracted mesh is empty");
    raster_ = raster::rasterize(mesh, texture, cam, background, workers);
}

GradientSet MeshRenderState::backward(const Image& image_grad) const {
    const bool rgb = channel_ == Channel::Rgb;
    const auto rg = raster::rasterize_backward(raster_, *mesh_, *texture_, rgb ? &image_grad : nullptr,
                                               rgb ? nullptr : &image_grad);
    GradientSet g;
    if (rgb) g.add("texture", 0) = rg.texture;
    if (!geometry_) return g;

    std::vector<Vec3> positions = rg.positions;
    if (!rgb) {
        const auto from_normals = vertex_normals_backward(*mesh_, rg.normals);
        for (std::size_t i = 0; i < positions.size(); ++i) positions[i] += from_normals[i];
    }
    const TetGradients tg = marching_tets_backward(*grid_, *mesh_, positions);
    g.add("sdf", 0) = tg.sdf;
    auto& d = g.add("deform", tg.deform.size() * 3);
    for (std::size_t i = 0; i < tg.deform.size(); ++i)
        for (int a = 0; a < 3; ++a) d[i * 3 + a] = tg.deform[i][a];
    return g;
}

// ---------------------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

Tensor predict_with_context(const Denoiser& denoiser, const Tensor& noisy, int t, const DenoiserCondition& cond,
                            const std::string& rule) {
    const std::string where = rule + " (t=" + std::to_string(t) + ", denoiser " + denoiser_kind_name(denoiser.kind()) + ")";
    try {
        return denoiser.predict(noisy, t, cond);
    } catch (const ProtocolError& e) {
        throw ProtocolError(e.code(), where + ": " + e.what());
    } catch (const TransportError& e) {
        throw TransportError(where + ": " + e.what());
    } catch (const InvalidArgument& e) {
        throw InvalidArgument(where + ": " + e.what());
    }
}

/// Upstream latent gradient w·(a − b), pushed through the codec and the render.
DistillStep finish_step(const RenderState& render, const Tensor& a, const Tensor& b, const TimestepSample& ts,
                        std::string rule, const DistillOptions& options, Clock::time_point start) {
    Tensor upstream(a.channels, a.height, a.width);
    simd::scaled_diff(1.0, a.data, b.data, upstream.data);
    DistillStep step;
    step.report.rule = std::move(rule);
    step.report.t = ts.t;
    step.report.weight = ts.weight;
    step.report.residual_norm = std::sqrt(simd::sum_squares(upstream.data));
    for (double& v : upstream.data) v *= ts.weight;

    step.gradients = render.backward(options.codec.encode_adjoint(upstream));
    double total = 0.0;
    for (const auto& g : step.gradients.groups) {
        const double n2 = simd::sum_squares(g.values);
        total += n2;
        step.report.grad_norms.emplace_back(g.group, std::sqrt(n2));
    }
    total = std::sqrt(total);
    if (!std::isfinite(total)) throw std::runtime_error(step.report.rule + ": non-finite gradient at t=" + std::to_string(ts.t));
    if (options.clip_norm > 0.0 && total > options.clip_norm) {
        step.gradients.scale(options.clip_norm / total);
        step.report.clipped = true;
    }
    step.report.duration_s = std::chrono::duration<double>(Clock::now() - start).count();
    return step;
}

struct Noised {
    Tensor latent;
    TimestepSample ts;
    Tensor noisy;
};

Noised noise_render(const RenderState& render, const DistillOptions& options, Rng& rng) {
    Noised n;
    n.latent = options.codec.encode(render.image());
    n.ts = sample_timestep(rng, options.schedule, options.timesteps, n.latent);
    n.noisy = add_noise(n.latent, n.ts, options.schedule);
    return n;
}

}  // namespace

DistillStep sds_grad(const RenderState& render, const Denoiser& denoiser, const DenoiserCondition& cond,
                     const DistillOptions& options, Rng& rng) {
    const auto start = Clock::now();
    const Noised n = noise_render(render, options, rng);
    const Tensor eps_hat = predict_with_context(denoiser, n.noisy, n.ts.t, cond, "sds");
    return finish_step(render, eps_hat, n.ts.eps, n.ts, "sds", options, start);
}

DistillStep vsd_grad(const RenderState& render, ResidualScoreModel& residual, const DenoiserCondition& cond,
                     const DistillOptions& options, Rng& rng, const VsdOptions& vsd) {
    const auto start = Clock::now();
    DenoiserCondition c = cond;
    if (!c.camera) c.camera = render.camera();
    const Noised n = noise_render(render, options, rng);
    const Tensor eps_pretrain = predict_with_context(residual.base(), n.noisy, n.ts.t, c, "vsd");
    const Tensor eps_phi = predict_with_context(residual, n.noisy, n.ts.t, c, "vsd");
    DistillStep step = finish_step(render, eps_pretrain, eps_phi, n.ts, "vsd", options, start);
    if (vsd.residual_steps > 0) {
        double loss = 0.0;
        for (int i = 0; i < vsd.residual_steps; ++i)
            loss = residual.train_step(n.latent, c, options.schedule, options.timesteps, rng);
        step.report.residual_loss = loss;
    }
    step.report.duration_s = std::chrono::duration<double>(Clock::now() - start).count();
    return step;
}

DistillStep zero123_sds_grad(const RenderState& render, const Denoiser& zero123, const Image& reference,
                             const RelativePose& rel, const CameraPose& default_cam, const DistillOptions& options,
                             Rng& rng) {
    const auto start = Clock::now();
    const CameraPose expected = apply_relative(default_cam, rel);
    const double gap = pose_distance(expected, render.camera());
    if (!(gap <= kPoseTolerance))
        throw InvalidArgument("zero123_sds: render pose differs from apply_relative(default, rel) by " +
                              std::to_string(gap));
    DenoiserCondition cond;
    cond.reference_image = reference;
    cond.relative_pose = rel;
    cond.camera = render.camera();
    const Noised n = noise_render(render, options, rng);
    const Tensor eps_hat = predict_with_context(zero123, n.noisy, n.ts.t, cond, "zero123_sds");
    return finish_step(render, eps_hat, n.ts.eps, n.ts, "zero123_sds", options, start);
}

DistillStep ipsd_geo_grad(const MeshRenderState& render, const Denoiser& ip, const ImagePromptEmbedding& y_n,
                          const std::vector<double>& y, const DistillOptions& options, Rng& rng) {
    const auto start = Clock::now();
    if (render.channel() != MeshRenderState::Channel::Normal)
        throw InvalidArgument("ipsd_geo: render state must expose the normal channel");
    DenoiserCondition cond;
    cond.text_embedding = y;
    cond.image_prompt = y_n;
    cond.camera = render.camera();
    const Noised n = noise_render(render, options, rng);
    const Tensor eps_hat = predict_with_context(ip, n.noisy, n.ts.t, cond, "ipsd_geo");
    return finish_step(render, eps_hat, n.ts.eps, n.ts, "ipsd_geo", options, start);
}

DistillStep ipsd_tex_grad(const MeshRenderState& render, const Denoiser& ip, const ImagePromptEmbedding& y_rgb,
                          const GeometryPromptDifference& delta_geo, const std::vector<double>& y,
                          const DistillOptions& options, Rng& rng) {
    const auto start = Clock::now();
    if (render.channel() != MeshRenderState::Channel::Rgb)
        throw InvalidArgument("ipsd_tex: render state must expose the color channel");
    if (delta_geo.view) {
        const double gap = pose_distance(*delta_geo.view, render.camera());
        if (!(gap <= kPoseTolerance))
            throw StaleStateError("ipsd_tex: geometry prompt difference was built for another viewpoint (pose gap " +
                                  std::to_string(gap) + ")");
    } else {
        for (double v : delta_geo.vector)
            if (v != 0.0) throw StaleStateError("ipsd_tex: geometry prompt difference carries no viewpoint");
    }
    DenoiserCondition cond;
    cond.text_embedding = y;
    cond.image_prompt = compensate(y_rgb, delta_geo);
    cond.camera = render.camera();
    const Noised n = noise_render(render, options, rng);
    const Tensor eps_hat = predict_with_context(ip, n.noisy, n.ts.t, cond, "ipsd_tex");
    return finish_step(render, eps_hat, n.ts.eps, n.ts, "ipsd_tex", options, start);
}

}  // namespace distill3d
