// SPDX-License-Identifier: Apache-2.0
#include "distill3d/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "distill3d/errors.hpp"

namespace distill3d {

double tensor_mse(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw InvalidArgument("tensor_mse: shape mismatch");
    if (a.data.empty()) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        acc += d * d;
    }
    return acc / double(a.data.size());
}

// ---------------------------------------------------------------------------

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
    if (betas_.size() < 2) throw InvalidArgument("NoiseSchedule: need at least 2 steps");
    for (std::size_t i = 0; i < betas_.size(); ++i) {
        if (!(betas_[i] > 0.0 && betas_[i] < 1.0)) throw InvalidArgument("NoiseSchedule: beta outside (0,1)");
        if (i > 0 && betas_[i] < betas_[i - 1]) throw InvalidArgument("NoiseSchedule: betas must not decrease");
    }
    alpha_bars_.resize(betas_.size());
    double prod = 1.0;
    for (std::size_t i = 0; i < betas_.size(); ++i) {
        prod *= 1.0 - betas_[i];
        alpha_bars_[i] = prod;
    }
}

NoiseSchedule linear_schedule(int num_steps, double beta_start, double beta_end) {
    if (num_steps < 2) throw InvalidArgument("linear_schedule: num_steps must be >= 2");
    if (!(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0))
        throw InvalidArgument("linear_schedule: require 0 < beta_start < beta_end < 1");
    std::vector<double> betas(num_steps);
    for (int i = 0; i < num_steps; ++i)
        betas[i] = beta_start + (beta_end - beta_start) * double(i) / double(num_steps - 1);
    return NoiseSchedule(std::move(betas));
}

double weight_at(Weighting w, double alpha_bar) {
    switch (w) {
        case Weighting::Unit: return 1.0;
        case Weighting::OneMinusAlphaBar: return 1.0 - alpha_bar;
        case Weighting::OneMinusAlphaBarOverSqrtAlphaBar: return (1.0 - alpha_bar) / std::sqrt(alpha_bar);
    }
    return 1.0;
}

Weighting parse_weighting(const std::string& name) {
    if (name == "unit") return Weighting::Unit;
    if (name == "one_minus_alpha_bar") return Weighting::OneMinusAlphaBar;
    if (name == "one_minus_alpha_bar_over_sqrt") return Weighting::OneMinusAlphaBarOverSqrtAlphaBar;
    throw InvalidArgument("unknown weighting '" + name + "'");
}

std::string weighting_name(Weighting w) {
    switch (w) {
        case Weighting::Unit: return "unit";
        case Weighting::OneMinusAlphaBar: return "one_minus_alpha_bar";
        case Weighting::OneMinusAlphaBarOverSqrtAlphaBar: return "one_minus_alpha_bar_over_sqrt";
    }
    return "unit";
}

int TimestepConfig::t_min(const NoiseSchedule& s) const {
    return std::clamp(static_cast<int>(std::lround(t_min_fraction * s.num_steps())), 1, s.num_steps());
}
int TimestepConfig::t_max(const NoiseSchedule& s) const {
    return std::clamp(static_cast<int>(std::lround(t_max_fraction * s.num_steps())), 1, s.num_steps());
}

TimestepSample sample_timestep(Rng& rng, const NoiseSchedule& schedule, const TimestepConfig& config,
                               const Tensor& shape) {
    const int lo = config.t_min(schedule), hi = config.t_max(schedule);
    if (lo > hi) throw InvalidArgument("sample_timestep: empty timestep range");
    TimestepSample s;
    s.t = rng.uniform_int(lo, hi);
    s.eps = Tensor(shape.channels, shape.height, shape.width);
    rng.fill_normal(s.eps.data);
    s.weight = weight_at(config.weighting, schedule.alpha_bar(s.t));
    return s;
}

Tensor add_noise(const Tensor& clean, const TimestepSample& sample, const NoiseSchedule& schedule) {
    if (!clean.same_shape(sample.eps)) throw InvalidArgument("add_noise: latent and noise shapes differ");
    const double ab = schedule.alpha_bar(sample.t);
    Tensor out(clean.channels, clean.height, clean.width);
    simd::axpby(std::sqrt(ab), clean.data, std::sqrt(1.0 - ab), sample.eps.data, out.data);
    return out;
}

// ---------------------------------------------------------------------------

std::string Codec::name() const { return kind == Kind::Identity ? "identity" : "avgpool-" + std::to_string(factor); }

Codec Codec::parse(const std::string& name) {
    if (name == "identity") return identity();
    if (name.rfind("avgpool-", 0) == 0) {
        const int k = std::stoi(name.substr(8));
        if (k < 1) throw InvalidArgument("codec: pool factor must be >= 1");
        return avgpool(k);
    }
    throw InvalidArgument("unknown codec '" + name + "'");
}

Tensor Codec::latent_shape(int width, int height) const {
    const int k = kind == Kind::Identity ? 1 : factor;
    if (width % k != 0 || height % k != 0)
        throw InvalidArgument("codec " + name() + ": image " + std::to_string(width) + "x" + std::to_string(height) +
                              " not divisible by " + std::to_string(k));
    return Tensor(3, height / k, width / k);
}

Tensor Codec::encode(const Image& image) const {
    Tensor z = latent_shape(image.width, image.height);
    const int k = kind == Kind::Identity ? 1 : factor;
    const double inv = 1.0 / (double(k) * k);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < z.height; ++y)
            for (int x = 0; x < z.width; ++x) {
                if (k == 1) {
                    z.at(c, y, x) = image.at(x, y, c);
                    continue;
                }
                double acc = 0.0;
                for (int dy = 0; dy < k; ++dy)
                    for (int dx = 0; dx < k; ++dx) acc += image.at(x * k + dx, y * k + dy, c);
                z.at(c, y, x) = acc * inv;
            }
    return z;
}

Image Codec::decode(const Tensor& latent) const {
    const int k = kind == Kind::Identity ? 1 : factor;
    if (latent.channels != 3) throw InvalidArgument("codec decode: latent must have 3 channels");
    Image img(latent.width * k, latent.height * k);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = latent.at(c, y / k, x / k);
    return img;
}

Image Codec::encode_adjoint(const Tensor& g) const {
    const int k = kind == Kind::Identity ? 1 : factor;
    Image img = decode(g);
    if (k > 1) {
        const double inv = 1.0 / (double(k) * k);
        for (double& v : img.pixels) v *= inv;
    }
    return img;
}

// ---------------------------------------------------------------------------

std::string denoiser_kind_name(DenoiserKind k) {
    switch (k) {
        case DenoiserKind::Pretrain: return "pretrain";
        case DenoiserKind::Zero123: return "zero123";
        case DenoiserKind::ImagePrompt: return "image_prompt";
    }
    return "pretrain";
}

DenoiserKind parse_denoiser_kind(const std::string& name) {
    if (name == "pretrain") return DenoiserKind::Pretrain;
    if (name == "zero123") return DenoiserKind::Zero123;
    if (name == "image_prompt") return DenoiserKind::ImagePrompt;
    throw InvalidArgument("unknown denoiser kind '" + name + "'");
}

DeltaTargetDenoiser::DeltaTargetDenoiser(NoiseSchedule schedule, Tensor target, DenoiserKind kind)
    : schedule_(std::move(schedule)), target_(std::move(target)), kind_(kind) {
    for (double v : target_.data)
        if (!std::isfinite(v)) throw InvalidArgument("delta_target_denoiser: non-finite target");
}

Tensor DeltaTargetDenoiser::predict_toward(const NoiseSchedule& schedule, const Tensor& target, const Tensor& noisy,
                                           int t) {
    if (!noisy.same_shape(target)) throw InvalidArgument("denoiser: latent shape does not match target");
    const double ab = schedule.alpha_bar(t);
    const double inv_sigma = 1.0 / std::sqrt(1.0 - ab);
    Tensor eps(noisy.channels, noisy.height, noisy.width);
    simd::axpby(inv_sigma, noisy.data, -std::sqrt(ab) * inv_sigma, target.data, eps.data);
    return eps;
}

Tensor DeltaTargetDenoiser::predict(const Tensor& noisy, int t, const DenoiserCondition&) const {
    return predict_toward(schedule_, target_, noisy, t);
}

AnalyticScene AnalyticScene::two_hemisphere_sphere(double radius) {
    AnalyticScene s;
    s.spheres.push_back({Vec3{}, radius, {1.0, 0.0, 0.0}, {0.0, 0.0, 1.0}, {0.0, 0.0, 1.0}});
    return s;
}

namespace {

struct AnalyticHit {
    double t = std::numeric_limits<double>::infinity();
    Rgb color{};
    Vec3 normal;  // world space, unit
};

AnalyticHit trace_analytic(const AnalyticScene& scene, const Ray& ray) {
    AnalyticHit hit;
    for (const auto& s : scene.spheres) {
        const Vec3 oc = ray.origin - s.center;
        const double b = dot(oc, ray.direction);
        const double c = dot(oc, oc) - s.radius * s.radius;
        const double disc = b * b - c;
        if (disc < 0.0) continue;
        const double t = -b - std::sqrt(disc);
        if (t <= 0.0 || t >= hit.t) continue;
        const Vec3 p = ray.origin + ray.direction * t - s.center;
        hit = {t, dot(p, s.split_normal) >= 0.0 ? s.front : s.back, p / s.radius};
    }
    for (const auto& box : scene.boxes) {
        double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
        int entry_axis = -1;
        bool inside = true;
        for (int a = 0; a < 3 && inside; ++a) {
            const double d = ray.direction[a], o = ray.origin[a];
            if (std::abs(d) < 1e-15) {
                inside = o >= box.lo[a] && o <= box.hi[a];
                continue;
            }
            double ta = (box.lo[a] - o) / d, tb = (box.hi[a] - o) / d;
            if (ta > tb) std::swap(ta, tb);
            if (ta > t0) {
                t0 = ta;
                entry_axis = a;
            }
            t1 = std::min(t1, tb);
            inside = t1 >= t0;
        }
        if (inside && entry_axis >= 0 && t0 > 0.0 && t0 < hit.t) {
            Vec3 n;
            n[entry_axis] = ray.direction[entry_axis] > 0.0 ? -1.0 : 1.0;
            hit = {t0, box.color, n};
        }
    }
    return hit;
}

template <class Shade>
Image supersampled(const CameraPose& cam, int supersample, Shade&& shade) {
    const int ss = std::max(1, supersample);
    const double aspect = double(cam.width) / cam.height;
    const double inv_f = 1.0 / cam.focal();
    Image img(cam.width, cam.height);
    const double inv = 1.0 / (double(ss) * ss);
    for (int py = 0; py < cam.height; ++py)
        for (int px = 0; px < cam.width; ++px) {
            Rgb acc{0.0, 0.0, 0.0};
            for (int sy = 0; sy < ss; ++sy)
                for (int sx = 0; sx < ss; ++sx) {
                    const double u = (px + (sx + 0.5) / ss) / cam.width * 2.0 - 1.0;
                    const double v = 1.0 - (py + (sy + 0.5) / ss) / cam.height * 2.0;
                    const Vec3 dir = normalized(cam.rotation * Vec3{u * inv_f * aspect, v * inv_f, -1.0});
                    const Rgb c = shade(Ray{cam.position, dir});
                    for (int k = 0; k < 3; ++k) acc[k] += c[k];
                }
            img.set(px, py, {acc[0] * inv, acc[1] * inv, acc[2] * inv});
        }
    return img;
}

}  // namespace

Image render_analytic(const AnalyticScene& scene, const CameraPose& cam, const Rgb& background, int supersample) {
    return supersampled(cam, supersample, [&](const Ray& ray) {
        const AnalyticHit hit = trace_analytic(scene, ray);
        return std::isfinite(hit.t) ? hit.color : background;
    });
}

Image render_analytic_normals(const AnalyticScene& scene, const CameraPose& cam, int supersample) {
    const Mat3 world_to_cam = cam.rotation.transposed();
    return supersampled(cam, supersample, [&](const Ray& ray) -> Rgb {
        const AnalyticHit hit = trace_analytic(scene, ray);
        if (!std::isfinite(hit.t)) return {0.5, 0.5, 1.0};
        const Vec3 n = world_to_cam * hit.normal;
        return {n.x * 0.5 + 0.5, n.y * 0.5 + 0.5, n.z * 0.5 + 0.5};
    });
}

Zero123Oracle::Zero123Oracle(NoiseSchedule schedule, AnalyticScene scene, CameraPose default_cam, Codec codec,
                             Rgb background, int supersample)
    : schedule_(std::move(schedule)),
      scene_(std::move(scene)),
      default_cam_(default_cam),
      codec_(codec),
      background_(background),
      supersample_(supersample) {
    default_cam_.validate();
}

Tensor Zero123Oracle::target_for(const RelativePose& rel) const {
    return codec_.encode(render_analytic(scene_, apply_relative(default_cam_, rel), background_, supersample_));
}

Tensor Zero123Oracle::predict(const Tensor& noisy, int t, const DenoiserCondition& cond) const {
    if (!cond.relative_pose) throw InvalidArgument("zero123 oracle: condition lacks relative_pose");
    return DeltaTargetDenoiser::predict_toward(schedule_, target_for(*cond.relative_pose), noisy, t);
}

ImagePromptOracle::ImagePromptOracle(NoiseSchedule schedule) : schedule_(std::move(schedule)) {}

Tensor ImagePromptOracle::decode_target(const ImagePromptEmbedding& e, const Tensor& shape) {
    const int P = e.patches;
    if (shape.channels != 3) throw InvalidArgument("image prompt oracle: latent must have 3 channels");
    if (e.vector.size() != e.expected_length()) throw InvalidArgument("image prompt oracle: malformed embedding");
    if (shape.width % P != 0 || shape.height % P != 0)
        throw InvalidArgument("image prompt oracle: latent size not divisible by patch count");
    const int pw = shape.width / P, ph = shape.height / P;
    Tensor target(3, shape.height, shape.width);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < shape.height; ++y)
            for (int x = 0; x < shape.width; ++x) target.at(c, y, x) = e.vector[std::size_t((x / pw) * P + y / ph) * 3 + c];
    return target;
}

Tensor ImagePromptOracle::predict(const Tensor& noisy, int t, const DenoiserCondition& cond) const {
    if (!cond.image_prompt) throw InvalidArgument("image prompt oracle: condition lacks image_prompt");
    return DeltaTargetDenoiser::predict_toward(schedule_, decode_target(*cond.image_prompt, noisy), noisy, t);
}

std::shared_ptr<Denoiser> delta_target_denoiser(const NoiseSchedule& schedule, const Tensor& target) {
    return std::make_shared<DeltaTargetDenoiser>(schedule, target);
}

std::shared_ptr<Denoiser> zero123_oracle(const NoiseSchedule& schedule, const AnalyticScene& scene,
                                         const CameraPose& default_cam, const Codec& codec, const Rgb& background) {
    return std::make_shared<Zero123Oracle>(schedule, scene, default_cam, codec, background);
}

std::shared_ptr<Denoiser> image_prompt_oracle(const NoiseSchedule& schedule) {
    return std::make_shared<ImagePromptOracle>(schedule);
}

// ---------------------------------------------------------------------------

std::vector<double> timestep_embedding(int t, int dim) {
    std::vector<double> e(dim, 0.0);
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * double(i) / std::max(1, half));
        e[i] = std::sin(t * freq);
        e[half + i] = std::cos(t * freq);
    }
    return e;
}

namespace {

inline double silu(double x) { return x * sigmoid(x); }
inline double silu_grad(double x) {
    const double s = sigmoid(x);
    return s * (1.0 + x * (1.0 - s));
}

}  // namespace

ResidualScoreModel::ResidualScoreModel(std::shared_ptr<const Denoiser> base, const Tensor& latent_shape,
                                       ResidualModelConfig config, std::optional<NoiseSchedule> schedule)
    : base_(std::move(base)),
      shape_(latent_shape.channels, latent_shape.height, latent_shape.width),
      config_(config),
      schedule_(std::move(schedule)) {
    if (!base_) throw InvalidArgument("ResidualScoreModel: base denoiser required");
    if (config_.hidden < 1 || config_.time_embedding < 2 || config_.input_grid < 1 || config_.batch < 1)
        throw InvalidArgument("ResidualScoreModel: bad widths");
    out_dim_ = shape_.size();
    grid_h_ = std::min(config_.input_grid, shape_.height);
    grid_w_ = std::min(config_.input_grid, shape_.width);
    in_dim_ = std::size_t(shape_.channels) * grid_h_ * grid_w_ + config_.time_embedding + kCameraEmbedding +
              (schedule_ ? 2 : 0);
    const std::size_t H = config_.hidden;
    params_.assign(H * in_dim_ + H + out_dim_ * H + out_dim_, 0.0);
    Rng rng(config_.init_seed);
    const double scale = 1.0 / std::sqrt(double(in_dim_));
    for (std::size_t i = 0; i < H * in_dim_; ++i) params_[i] = scale * rng.normal();
    // W2 and b2 stay zero so the residual starts at exactly zero
    grads_.assign(params_.size(), 0.0);
    adam_m_.assign(params_.size(), 0.0);
    adam_v_.assign(params_.size(), 0.0);
}

std::vector<double> ResidualScoreModel::build_input(const Tensor& noisy, int t, const DenoiserCondition& cond) const {
    if (!noisy.same_shape(shape_)) throw InvalidArgument("ResidualScoreModel: latent shape mismatch");
    std::vector<double> x;
    x.reserve(in_dim_);
    const std::size_t cells = std::size_t(grid_h_) * grid_w_;
    x.assign(std::size_t(noisy.channels) * cells, 0.0);
    std::vector<int> count(cells, 0);
    for (int y = 0; y < noisy.height; ++y)
        for (int xx = 0; xx < noisy.width; ++xx) {
            const std::size_t cell = std::size_t(y * grid_h_ / noisy.height) * grid_w_ + xx * grid_w_ / noisy.width;
            ++count[cell];
            for (int c = 0; c < noisy.channels; ++c) x[c * cells + cell] += noisy.at(c, y, xx);
        }
    for (int c = 0; c < noisy.channels; ++c)
        for (std::size_t k = 0; k < cells; ++k) x[c * cells + k] /= count[k];
    const auto te = timestep_embedding(t, config_.time_embedding);
    x.insert(x.end(), te.begin(), te.end());
    if (schedule_) {
        if (t < 1 || t > schedule_->num_steps()) throw InvalidArgument("ResidualScoreModel: timestep out of range");
        const double ab = schedule_->alpha_bar(t);
        x.insert(x.end(), {std::sqrt(ab / (1.0 - ab)), 0.1 * std::log(ab / (1.0 - ab))});
    }
    if (cond.camera) {
        const Vec3 dir = normalized(cond.camera->position);
        const Vec3 up = cond.camera->rotation.column(1);
        x.insert(x.end(), {dir.x, dir.y, dir.z, up.x, up.y, up.z});
    } else {
        x.insert(x.end(), kCameraEmbedding, 0.0);
    }
    return x;
}

Tensor ResidualScoreModel::residual(const Tensor& noisy, int t, const DenoiserCondition& cond) const {
    const std::size_t H = config_.hidden;
    const std::span<const double> p = params_;
    const auto x = build_input(noisy, t, cond);
    std::vector<double> h(H);
    simd::gemv(p.subspan(0, H * in_dim_), H, in_dim_, x, p.subspan(H * in_dim_, H), h);
    for (double& v : h) v = silu(v);
    Tensor r(shape_.channels, shape_.height, shape_.width);
    const std::size_t w2 = H * in_dim_ + H;
    simd::gemv(p.subspan(w2, out_dim_ * H), out_dim_, H, h, p.subspan(w2 + out_dim_ * H, out_dim_), r.data);
    return r;
}

Tensor ResidualScoreModel::predict(const Tensor& noisy, int t, const DenoiserCondition& cond) const {
    Tensor out = base_->predict(noisy, t, cond);
    const Tensor r = residual(noisy, t, cond);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += r.data[i];
    return out;
}

double ResidualScoreModel::train_step(const Tensor& render_latent, const DenoiserCondition& cond,
                                      const NoiseSchedule& schedule, const TimestepConfig& timesteps, Rng& rng) {
    const std::size_t H = config_.hidden;
    const int B = config_.batch;
    std::vector<TimestepSample> draws;
    if (B == 1) {
        draws.push_back(sample_timestep(rng, schedule, timesteps, render_latent));
    } else {
        const int lo = timesteps.t_min(schedule), hi = timesteps.t_max(schedule);
        if (lo > hi) throw InvalidArgument("train_step: empty timestep range");
        const double u = rng.uniform(0.0, 1.0);
        for (int b = 0; b < B; ++b) {
            const double frac = std::fmod(u + double(b) / B, 1.0);
            TimestepSample ts;
            ts.t = std::min(hi, lo + int(frac * (hi - lo + 1)));
            ts.eps = Tensor(render_latent.channels, render_latent.height, render_latent.width);
            rng.fill_normal(ts.eps.data);
            ts.weight = weight_at(timesteps.weighting, schedule.alpha_bar(ts.t));
            draws.push_back(std::move(ts));
        }
    }

    const std::span<double> p = params_;
    const std::size_t b1 = H * in_dim_, w2 = b1 + H, b2 = w2 + out_dim_ * H;
    std::fill(grads_.begin(), grads_.end(), 0.0);
    const std::span<double> g = grads_;
    double loss = 0.0;
    for (const TimestepSample& ts : draws) {
        const Tensor noisy = add_noise(render_latent, ts, schedule);
        const auto x = build_input(noisy, ts.t, cond);
        std::vector<double> pre(H), act(H);
        simd::gemv(p.subspan(0, b1), H, in_dim_, x, p.subspan(b1, H), pre);
        for (std::size_t i = 0; i < H; ++i) act[i] = silu(pre[i]);
        Tensor out = base_->predict(noisy, ts.t, cond);
        std::vector<double> r(out_dim_);
        simd::gemv(p.subspan(w2, out_dim_ * H), out_dim_, H, act, p.subspan(b2, out_dim_), r);

        std::vector<double> d_out(out_dim_);
        for (std::size_t i = 0; i < out_dim_; ++i) {
            const double diff = out.data[i] + r[i] - ts.eps.data[i];
            loss += diff * diff / B;
            d_out[i] = 2.0 * diff / B;
        }
        simd::outer_acc(d_out, act, g.subspan(w2, out_dim_ * H));
        for (std::size_t i = 0; i < out_dim_; ++i) g[b2 + i] += d_out[i];
        std::vector<double> d_act(H, 0.0);
        simd::gemv_transposed_acc(p.subspan(w2, out_dim_ * H), out_dim_, H, d_out, d_act);
        std::vector<double> d_pre(H);
        for (std::size_t i = 0; i < H; ++i) d_pre[i] = d_act[i] * silu_grad(pre[i]);
        simd::outer_acc(d_pre, x, g.subspan(0, b1));
        for (std::size_t i = 0; i < H; ++i) g[b1 + i] += d_pre[i];
    }

    ++step_;
    simd::AdamParams ap;
    ap.lr = config_.learning_rate;
    ap.bias1 = 1.0 - std::pow(ap.beta1, double(step_));
    ap.bias2 = 1.0 - std::pow(ap.beta2, double(step_));
    simd::adam_update(ap, grads_, adam_m_, adam_v_, params_);
    return loss;
}

std::uint64_t ResidualScoreModel::state_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (double v : params_) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        h = (h ^ bits) * 0x100000001b3ULL;
    }
    return h;
}

}  // namespace distill3d
