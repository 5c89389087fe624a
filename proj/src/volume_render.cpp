// SPDX-License-Identifier: Apache-2.0
#include "distill3d/volume_render.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "distill3d/errors.hpp"
#include "distill3d/parallel.hpp"

namespace distill3d::volume {

void RenderSettings::validate() const {
    if (steps < 16) throw InvalidArgument("volume render: steps must be >= 16");
    if (workers < 1) throw InvalidArgument("volume render: workers must be >= 1");
}

bool intersect_cube(const Ray& ray, double& t_near, double& t_far) {
    t_near = 0.0;
    t_far = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        const double o = ray.origin[a], d = ray.direction[a];
        if (std::abs(d) < 1e-15) {
            if (o < -1.0 || o > 1.0) return false;
            continue;
        }
        double t0 = (-1.0 - o) / d, t1 = (1.0 - o) / d;
        if (t0 > t1) std::swap(t0, t1);
        t_near = std::max(t_near, t0);
        t_far = std::min(t_far, t1);
    }
    return t_far > t_near;
}

namespace {

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Per-sample offset in [0,1) inside its stratum.
double stratum_offset(const RenderSettings& s, int px, int py, int i) {
    if (!s.jitter) return 0.5;
    const std::uint64_t key = splitmix(s.stratification_seed ^ splitmix((std::uint64_t(py) << 40) ^
                                                                        (std::uint64_t(px) << 20) ^ std::uint64_t(i)));
    return double(key >> 11) * 0x1.0p-53;
}

struct Sample {
    Vec3 point;
    double raw = 0.0;
    double sigma = 0.0;
    double alpha = 0.0;
    double transmittance = 1.0;  // before this sample
    std::array<double, 3> color{};
};

struct MarchedRay {
    bool hit = false;
    double delta = 0.0;
    std::vector<Sample> samples;
    double residual_transmittance = 1.0;
    std::array<double, 3> pixel{};  // before clamping
};

Vec3 clamp_to_cube(Vec3 p) {
    for (int a = 0; a < 3; ++a) p[a] = std::clamp(p[a], -1.0, 1.0);
    return p;
}

void march(const Grid3& density, const Grid3* color, const CameraPose& cam, int px, int py,
           const RenderSettings& s, MarchedRay& out) {
    out.samples.clear();
    out.residual_transmittance = 1.0;
    out.pixel = s.background;
    const Ray ray = pixel_ray(cam, px, py);
    double t0 = 0.0, t1 = 0.0;
    out.hit = intersect_cube(ray, t0, t1);
    if (!out.hit) return;
    out.delta = (t1 - t0) / s.steps;
    out.samples.resize(s.steps);
    double T = 1.0;
    std::array<double, 3> acc{};
    for (int i = 0; i < s.steps; ++i) {
        Sample& smp = out.samples[i];
        const double t = t0 + (i + stratum_offset(s, px, py, i)) * out.delta;
        smp.point = clamp_to_cube(ray.origin + ray.direction * t);
        smp.raw = sample_trilinear(density, smp.point).value[0];
        smp.sigma = softplus(smp.raw);
        smp.alpha = -std::expm1(-smp.sigma * out.delta);
        smp.transmittance = T;
        if (color != nullptr) {
            smp.color = sample_trilinear(*color, smp.point).value;
            const double w = T * smp.alpha;
            for (int c = 0; c < 3; ++c) acc[c] += w * smp.color[c];
        }
        T *= 1.0 - smp.alpha;
    }
    out.residual_transmittance = T;
    for (int c = 0; c < 3; ++c) out.pixel[c] = acc[c] + T * s.background[c];
}

void check_grids(const Grid3& density, const Grid3& color) {
    if (density.channels() != 1) throw InvalidArgument("volume render: density grid must have 1 channel");
    if (color.channels() != 3) throw InvalidArgument("volume render: color grid must have 3 channels");
}

}  // namespace

Image render(const Grid3& density, const Grid3& color, const CameraPose& cam, const RenderSettings& settings) {
    settings.validate();
    check_grids(density, color);
    Image img(cam.width, cam.height);
    parallel_chunks(cam.height, settings.workers, [&](int, int row_begin, int row_end) {
        MarchedRay ray;
        for (int py = row_begin; py < row_end; ++py)
            for (int px = 0; px < cam.width; ++px) {
                march(density, &color, cam, px, py, settings, ray);
                for (int c = 0; c < 3; ++c) img.at(px, py, c) = std::clamp(ray.pixel[c], 0.0, 1.0);
            }
    });
    return img;
}

Gradients render_backward(const Grid3& density, const Grid3& color, const CameraPose& cam,
                          const RenderSettings& settings, const Image& upstream) {
    settings.validate();
    check_grids(density, color);
    if (upstream.width != cam.width || upstream.height != cam.height)
        throw InvalidArgument("render_backward: upstream shape does not match camera");

    const int workers = std::max(1, std::min(settings.workers, cam.height));
    std::vector<Gradients> partial(workers);
    parallel_chunks(cam.height, workers, [&](int w, int row_begin, int row_end) {
        Gradients& g = partial[w];
        g.density.assign(density.values().size(), 0.0);
        g.color.assign(color.values().size(), 0.0);
        MarchedRay ray;
        for (int py = row_begin; py < row_end; ++py)
            for (int px = 0; px < cam.width; ++px) {
                std::array<double, 3> up{};
                bool any = false;
                for (int c = 0; c < 3; ++c) up[c] = upstream.at(px, py, c), any |= up[c] != 0.0;
                if (!any) continue;
                march(density, &color, cam, px, py, settings, ray);
                if (!ray.hit) continue;
                // clamp(x) has unit slope on [0,1] and zero slope outside
                for (int c = 0; c < 3; ++c)
                    if (ray.pixel[c] < 0.0 || ray.pixel[c] > 1.0) up[c] = 0.0;

                // suffix[i] = sum_{j>i} w_j c_j + T_final·bg
                std::array<double, 3> suffix;
                for (int c = 0; c < 3; ++c) suffix[c] = ray.residual_transmittance * settings.background[c];
                for (int i = settings.steps - 1; i >= 0; --i) {
                    const Sample& smp = ray.samples[i];
                    const double weight = smp.transmittance * smp.alpha;
                    const double t_next = smp.transmittance * (1.0 - smp.alpha);
                    double d_sigma = 0.0;
                    std::array<double, 3> d_color{};
                    for (int c = 0; c < 3; ++c) {
                        d_sigma += up[c] * (t_next * smp.color[c] - suffix[c]);
                        d_color[c] = up[c] * weight;
                        suffix[c] += weight * smp.color[c];
                    }
                    d_sigma *= ray.delta;
                    const double d_raw = d_sigma * sigmoid(smp.raw);
                    const double d_raw_arr[1] = {d_raw};
                    sample_trilinear_backward(density, smp.point, d_raw_arr).accumulate_into(g.density);
                    sample_trilinear_backward(color, smp.point, d_color).accumulate_into(g.color);
                }
            }
    });
    Gradients total = std::move(partial[0]);
    for (int w = 1; w < workers; ++w) {
        for (std::size_t i = 0; i < total.density.size(); ++i) total.density[i] += partial[w].density[i];
        for (std::size_t i = 0; i < total.color.size(); ++i) total.color[i] += partial[w].color[i];
    }
    if (total.density.empty()) {
        total.density.assign(density.values().size(), 0.0);
        total.color.assign(color.values().size(), 0.0);
    }
    return total;
}

RayWeights ray_weights(const Grid3& density, const CameraPose& cam, int px, int py, const RenderSettings& settings) {
    settings.validate();
    MarchedRay ray;
    march(density, nullptr, cam, px, py, settings, ray);
    RayWeights out;
    for (const Sample& s : ray.samples) out.weights.push_back(s.transmittance * s.alpha);
    out.residual_transmittance = ray.residual_transmittance;
    return out;
}

}  // namespace distill3d::volume
