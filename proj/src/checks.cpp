// SPDX-License-Identifier: Apache-2.0
#include "distill3d/checks.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <sstream>

#include "distill3d/distill.hpp"
#include "distill3d/prompts.hpp"
#include "distill3d/simd.hpp"

namespace distill3d {

namespace {

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-7}); }

template <class T, class Loss>
double central(T& v, double eps, Loss&& loss) {
    const T orig = v;
    v = T(orig + eps);
    const T hi = v;
    const double up = loss();
    v = T(orig - eps);
    const T lo = v;
    const double down = loss();
    v = orig;
    return (up - down) / (double(hi) - double(lo));
}

double weighted(const Image& a, const Image& w) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) s += a.pixels[i] * w.pixels[i];
    return s;
}

std::string fmt(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

CheckResult schedule_check() {
    const NoiseSchedule s = linear_schedule();
    bool ok = std::abs(s.alpha_bar(1) - 0.9999) < 1e-15 && s.alpha_bar(s.num_steps()) > 0.0;
    for (int t = 2; t <= s.num_steps(); ++t) ok &= s.alpha_bar(t) < s.alpha_bar(t - 1);
    return {"noise schedule monotone, alpha_bar(1) = 0.9999", ok, ""};
}

CheckResult delta_identity_check() {
    const NoiseSchedule s = linear_schedule();
    Rng rng(17);
    Tensor target(3, 4, 4), z(3, 4, 4);
    double worst = 0.0;
    for (int i = 0; i < 200; ++i) {
        rng.fill_normal(target.data);
        rng.fill_normal(z.data);
        const TimestepSample ts = sample_timestep(rng, s, {}, z);
        const Tensor eps_hat = DeltaTargetDenoiser::predict_toward(s, target, add_noise(z, ts, s), ts.t);
        const double k = std::sqrt(s.alpha_bar(ts.t) / (1.0 - s.alpha_bar(ts.t)));
        for (std::size_t j = 0; j < z.data.size(); ++j)
            worst = std::max(worst, std::abs(eps_hat.data[j] - ts.eps.data[j] - k * (z.data[j] - target.data[j])));
    }
    return {"delta-oracle identity", worst <= 1e-6, "max error " + fmt(worst)};
}

CheckResult codec_adjoint_check() {
    Rng rng(3);
    const Codec codec = Codec::avgpool(2);
    Image x(8, 8);
    for (double& v : x.pixels) v = rng.normal();
    Tensor u = codec.latent_shape(8, 8);
    rng.fill_normal(u.data);
    const Tensor ex = codec.encode(x);
    const Image au = codec.encode_adjoint(u);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < u.data.size(); ++i) lhs += ex.data[i] * u.data[i];
    for (std::size_t i = 0; i < x.pixels.size(); ++i) rhs += x.pixels[i] * au.pixels[i];
    return {"codec adjoint", std::abs(lhs - rhs) <= 1e-9, "gap " + fmt(std::abs(lhs - rhs))};
}

CheckResult embedder_check() {
    Rng rng(5);
    Image a(16, 16), b(16, 16), c(16, 16), mix(16, 16);
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        a.pixels[i] = rng.uniform();
        b.pixels[i] = rng.uniform();
        c.pixels[i] = rng.uniform();
    }
    for (std::size_t i = 0; i < a.pixels.size(); ++i) mix.pixels[i] = a.pixels[i] + b.pixels[i] - c.pixels[i];
    const auto lhs = compensate(embed_image(a, 4), geometry_prompt_difference(embed_image(b, 4), embed_image(c, 4)));
    const auto rhs = embed_image(mix, 4);
    double worst = 0.0;
    for (std::size_t i = 0; i < lhs.vector.size(); ++i) worst = std::max(worst, std::abs(lhs.vector[i] - rhs.vector[i]));
    const auto self = geometry_prompt_difference(embed_image(a, 4), embed_image(a, 4));
    const bool zero = std::all_of(self.vector.begin(), self.vector.end(), [](double v) { return v == 0.0; });
    return {"embedder linearity and self-difference", worst <= 1e-12 && zero, "max error " + fmt(worst)};
}

CheckResult residual_init_check() {
    const NoiseSchedule s = linear_schedule();
    Tensor target(3, 4, 4, 0.3);
    auto base = std::make_shared<DeltaTargetDenoiser>(s, target);
    ResidualScoreModel phi(base, target, {16, 8, 1e-3, 7});
    Tensor noisy(3, 4, 4);
    Rng rng(9);
    rng.fill_normal(noisy.data);
    DenoiserCondition cond;
    cond.camera = look_at_origin(30, 10, 2.2, 50, 4, 4);
    return {"residual score model starts at the base model", phi.predict(noisy, 500, cond) == base->predict(noisy, 500, cond),
            ""};
}

CheckResult volume_fd_check() {
    Rng rng(21);
    Grid3 density(6, 1), color(6, 3);
    for (float& v : density.values()) v = float(rng.uniform(-1.0, 1.5));
    for (float& v : color.values()) v = float(rng.uniform(0.2, 0.8));
    const CameraPose cam = look_at_origin(30, 20, 2.2, 50, 8, 8);
    volume::RenderSettings st;
    st.steps = 16;
    Image up(8, 8);
    for (double& v : up.pixels) v = rng.uniform(-1, 1);
    const auto g = volume::render_backward(density, color, cam, st, up);
    auto loss = [&] { return weighted(volume::render(density, color, cam, st), up); };
    double worst = 0.0;
    for (int i = 0; i < 40; ++i) {
        const std::size_t d = rng.next_u64() % density.values().size();
        worst = std::max(worst, rel_err(g.density[d], central(density.values()[d], 1e-3, loss)));
        const std::size_t c = rng.next_u64() % color.values().size();
        worst = std::max(worst, rel_err(g.color[c], central(color.values()[c], 1e-3, loss)));
    }
    return {"volume renderer backward vs finite differences", worst < 1e-3, "worst rel error " + fmt(worst)};
}

CheckResult mesh_checks(std::vector<CheckResult>& out) {
    TetGrid grid = build_tet_grid(12);
    grid.set_sdf([](const Vec3& p) { return norm(p) - 0.55; });
    const SurfaceMesh mesh = marching_tets(grid);
    std::map<std::pair<int, int>, int> edges;
    for (const auto& f : mesh.faces)
        for (int k = 0; k < 3; ++k) {
            const int a = f[k], b = f[(k + 1) % 3];
            ++edges[{std::min(a, b), std::max(a, b)}];
        }
    bool closed = !edges.empty();
    for (const auto& [e, n] : edges) closed &= n == 2;
    double worst = 0.0;
    for (const Vec3& v : mesh.vertices) worst = std::max(worst, std::abs(norm(v) - 0.55));
    out.push_back({"marching tets sphere is closed and near the surface", closed && worst <= 2.0 / 12,
                   "max radial error " + fmt(worst)});

    TetGrid scaled = grid;
    for (double& s : scaled.sdf) s *= 2.0;
    const SurfaceMesh m2 = marching_tets(scaled);
    out.push_back({"SDF scaling invariance", m2.vertices == mesh.vertices && m2.faces == mesh.faces, ""});

    Rng rng(31);
    Grid3 texture(6, 3);
    for (float& v : texture.values()) v = float(rng.uniform(0.2, 0.8));
    const CameraPose cam = look_at_origin(20, 15, 2.2, 50, 12, 12);
    const auto state = raster::rasterize(mesh, texture, cam, {1, 1, 1});
    Image up(12, 12);
    for (double& v : up.pixels) v = rng.uniform(-1, 1);
    const auto g = raster::rasterize_backward(state, mesh, texture, &up, nullptr);
    auto loss = [&] { return weighted(raster::rasterize(mesh, texture, cam, {1, 1, 1}).rgb, up); };
    double tw = 0.0;
    for (int i = 0; i < 40; ++i) {
        const std::size_t k = rng.next_u64() % texture.values().size();
        tw = std::max(tw, rel_err(g.texture[k], central(texture.values()[k], 1e-3, loss)));
    }
    out.push_back({"rasterizer texture backward vs finite differences", tw < 1e-3, "worst rel error " + fmt(tw)});

    std::vector<Vec3> vup(mesh.vertices.size());
    for (auto& u : vup) u = {rng.normal(), rng.normal(), rng.normal()};
    const auto tg = marching_tets_backward(grid, mesh, vup);
    auto mloss = [&] {
        const SurfaceMesh m = marching_tets(grid);
        double s = 0.0;
        for (std::size_t i = 0; i < vup.size(); ++i) s += dot(m.vertices[i], vup[i]);
        return s;
    };
    double mw = 0.0;
    int checked = 0;
    for (std::size_t v = 0; v < grid.sdf.size() && checked < 40; v += 37) {
        if (tg.sdf[v] == 0.0) continue;
        ++checked;
        mw = std::max(mw, rel_err(tg.sdf[v], central(grid.sdf[v], 1e-4, mloss)));
    }
    return {"marching tets backward vs finite differences", checked > 0 && mw < 1e-3, "worst rel error " + fmt(mw)};
}

CheckResult simd_check() {
    Rng rng(41);
    std::vector<double> x(1031), y(1031), a(1031), b(1031);
    rng.fill_normal(x);
    rng.fill_normal(y);
    simd::scalar::axpby(0.7, x, -1.3, y, a);
    simd::axpby(0.7, x, -1.3, y, b);
    const double ds = simd::scalar::dot(x, y), dv = simd::dot(x, y);
    return {"SIMD kernels agree with scalar reference (" + std::string(simd::isa_name(simd::active_isa())) + ")",
            a == b && std::abs(ds - dv) <= 1e-9 * std::max(1.0, std::abs(ds)), ""};
}

CheckResult sds_fixed_point_check() {
    Image params(8, 8, 0.4);
    const ImageRenderState state(params);
    DistillOptions opt;
    const auto target = opt.codec.encode(params);
    const DeltaTargetDenoiser d(opt.schedule, target);
    Rng rng(2);
    const DistillStep s = sds_grad(state, d, {}, opt, rng);
    return {"SDS fixed point has zero gradient", s.gradients.global_norm() <= 1e-6, "norm " + fmt(s.gradients.global_norm())};
}

}  // namespace

std::vector<CheckResult> run_invariant_checks() {
    std::vector<CheckResult> out;
    const std::vector<std::function<CheckResult()>> checks{schedule_check,     delta_identity_check, codec_adjoint_check,
                                                           embedder_check,     residual_init_check,  volume_fd_check,
                                                           sds_fixed_point_check, simd_check};
    for (const auto& c : checks) {
        try {
            out.push_back(c());
        } catch (const std::exception& e) {
            out.push_back({"(check threw)", false, e.what()});
        }
    }
    try {
        out.push_back(mesh_checks(out));
    } catch (const std::exception& e) {
        out.push_back({"mesh checks", false, e.what()});
    }
    return out;
}

}  // namespace distill3d
