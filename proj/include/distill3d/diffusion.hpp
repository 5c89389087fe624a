// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "distill3d/camera.hpp"
#include "distill3d/image.hpp"
#include "distill3d/prompts.hpp"
#include "distill3d/rng.hpp"
#include "distill3d/simd.hpp"

namespace distill3d {

/// Channels × height × width tensor, row-major.
struct Tensor {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(int c, int h, int w, double fill = 0.0) : channels(c), height(h), width(w), data(std::size_t(c) * h * w, fill) {}

    std::size_t size() const noexcept { return data.size(); }
    bool same_shape(const Tensor& o) const noexcept {
        return channels == o.channels && height == o.height && width == o.width;
    }
    double& at(int c, int y, int x) { return data[(std::size_t(c) * height + y) * width + x]; }
    double at(int c, int y, int x) const { return data[(std::size_t(c) * height + y) * width + x]; }
    bool operator==(const Tensor&) const = default;
};

double tensor_mse(const Tensor& a, const Tensor& b);

// ---------------------------------------------------------------------------
// Noise schedule and timestep sampling

/// DDPM schedule; index t runs over [1, num_steps].
class NoiseSchedule {
public:
    NoiseSchedule() = default;
    /// Explicit betas, validated (non-decreasing in (0,1), ≥ 2 steps).
    explicit NoiseSchedule(std::vector<double> betas);

    int num_steps() const noexcept { return static_cast<int>(betas_.size()); }
    double beta(int t) const { return betas_.at(t - 1); }
    double alpha_bar(int t) const { return alpha_bars_.at(t - 1); }
    const std::vector<double>& betas() const noexcept { return betas_; }
    const std::vector<double>& alpha_bars() const noexcept { return alpha_bars_; }

private:
    std::vector<double> betas_;
    std::vector<double> alpha_bars_;
};

NoiseSchedule linear_schedule(int num_steps = 1000, double beta_start = 1e-4, double beta_end = 2e-2);

enum class Weighting { Unit, OneMinusAlphaBar, OneMinusAlphaBarOverSqrtAlphaBar };

double weight_at(Weighting w, double alpha_bar);
Weighting parse_weighting(const std::string& name);
std::string weighting_name(Weighting w);

struct TimestepConfig {
    double t_min_fraction = 0.02;
    double t_max_fraction = 0.98;
    Weighting weighting = Weighting::OneMinusAlphaBar;

    int t_min(const NoiseSchedule& s) const;
    int t_max(const NoiseSchedule& s) const;
};

struct TimestepSample {
    int t = 1;
    Tensor eps;
    double weight = 1.0;
};

/// Uniform t in [t_min, t_max], standard normal ε shaped like `shape`.
TimestepSample sample_timestep(Rng& rng, const NoiseSchedule& schedule, const TimestepConfig& config,
                               const Tensor& shape);

/// z_t = √ᾱ_t·z + √(1−ᾱ_t)·ε
Tensor add_noise(const Tensor& clean, const TimestepSample& sample, const NoiseSchedule& schedule);

// ---------------------------------------------------------------------------
// Latent codec: fixed linear stand-in for a pretrained image encoder.

struct Codec {
    enum class Kind { Identity, AvgPool };
    Kind kind = Kind::Identity;
    int factor = 1;  // block size for AvgPool

    static Codec identity() { return {}; }
    static Codec avgpool(int k) { return {Kind::AvgPool, k}; }
    std::string name() const;
    static Codec parse(const std::string& name);  // "identity" | "avgpool-<k>"

    /// Latent shape for an image of the given size; throws on non-divisible sizes.
    Tensor latent_shape(int width, int height) const;
    Tensor encode(const Image& image) const;
    /// Right inverse of encode (nearest upsample for AvgPool).
    Image decode(const Tensor& latent) const;
    /// Transpose of encode: maps a latent-space gradient to image space.
    Image encode_adjoint(const Tensor& latent_grad) const;
    bool operator==(const Codec&) const = default;
};

// ---------------------------------------------------------------------------
// Denoisers

enum class DenoiserKind { Pretrain, Zero123, ImagePrompt };
std::string denoiser_kind_name(DenoiserKind k);
DenoiserKind parse_denoiser_kind(const std::string& name);

struct DenoiserCondition {
    std::vector<double> text_embedding;
    std::optional<ImagePromptEmbedding> image_prompt;
    std::optional<RelativePose> relative_pose;
    std::optional<Image> reference_image;
    std::optional<CameraPose> camera;
    double guidance_scale = 1.0;
};

/// Conditional noise predictor ε(z_t; cond, t). Implementations are deterministic
/// functions of their inputs.
class Denoiser {
public:
    virtual ~Denoiser() = default;
    virtual Tensor predict(const Tensor& noisy, int t, const DenoiserCondition& cond) const = 0;
    virtual DenoiserKind kind() const = 0;
    /// Digest of any learnable state; analytic denoisers return a constant.
    virtual std::uint64_t state_hash() const { return 0; }
};

/// Exact denoiser of a point mass at `target`: ε̂ = (z_t − √ᾱ_t·target)/√(1−ᾱ_t).
class DeltaTargetDenoiser final : public Denoiser {
public:
    DeltaTargetDenoiser(NoiseSchedule schedule, Tensor target, DenoiserKind kind = DenoiserKind::Pretrain);
    Tensor predict(const Tensor& noisy, int t, const DenoiserCondition& cond) const override;
    DenoiserKind kind() const override { return kind_; }
    const Tensor& target() const noexcept { return target_; }

    /// Shared formula, also used by the view- and prompt-conditioned oracles.
    static Tensor predict_toward(const NoiseSchedule& schedule, const Tensor& target, const Tensor& noisy, int t);

private:
    NoiseSchedule schedule_;
    Tensor target_;
    DenoiserKind kind_;
};

/// Analytically renderable reference scene for the view-conditioned oracle.
struct AnalyticScene {
    struct Sphere {
        Vec3 center;
        double radius = 0.6;
        Rgb front{1.0, 0.0, 0.0};  // color where dot(p − center, split_normal) ≥ 0
        Rgb back{0.0, 0.0, 1.0};
        Vec3 split_normal{0.0, 0.0, 1.0};
    };
    struct Box {
        Vec3 lo, hi;
        Rgb color{0.5, 0.5, 0.5};
    };
    std::vector<Sphere> spheres;
    std::vector<Box> boxes;

    /// Red hemisphere facing +z, blue facing −z.
    static AnalyticScene two_hemisphere_sphere(double radius = 0.6);
};

/// Ray-traced render with `supersample`² jittered-free subpixels per pixel.
Image render_analytic(const AnalyticScene& scene, const CameraPose& cam, const Rgb& background, int supersample = 4);
/// Camera-space normals mapped by n·0.5+0.5; background pixels are (0.5, 0.5, 1).
Image render_analytic_normals(const AnalyticScene& scene, const CameraPose& cam, int supersample = 4);

/// Stand-in for a novel-view diffusion model: the target is the encoded render of
/// the true scene from apply_relative(default_cam, R, T).
class Zero123Oracle final : public Denoiser {
public:
    Zero123Oracle(NoiseSchedule schedule, AnalyticScene scene, CameraPose default_cam, Codec codec, Rgb background,
                  int supersample = 4);
    Tensor predict(const Tensor& noisy, int t, const DenoiserCondition& cond) const override;
    DenoiserKind kind() const override { return DenoiserKind::Zero123; }
    /// Encoded ground-truth view for a relative pose.
    Tensor target_for(const RelativePose& rel) const;

private:
    NoiseSchedule schedule_;
    AnalyticScene scene_;
    CameraPose default_cam_;
    Codec codec_;
    Rgb background_;
    int supersample_;
};

/// Stand-in for an image-prompt-conditioned model: decodes condition.image_prompt to a
/// constant-per-patch latent and denoises toward it. The text embedding is ignored.
class ImagePromptOracle final : public Denoiser {
public:
    explicit ImagePromptOracle(NoiseSchedule schedule);
    Tensor predict(const Tensor& noisy, int t, const DenoiserCondition& cond) const override;
    DenoiserKind kind() const override { return DenoiserKind::ImagePrompt; }
    /// Target latent (channels-first patch means) for a latent shape.
    static Tensor decode_target(const ImagePromptEmbedding& embedding, const Tensor& shape);

private:
    NoiseSchedule schedule_;
};

std::shared_ptr<Denoiser> delta_target_denoiser(const NoiseSchedule& schedule, const Tensor& target);
std::shared_ptr<Denoiser> zero123_oracle(const NoiseSchedule& schedule, const AnalyticScene& scene,
                                         const CameraPose& default_cam, const Codec& codec, const Rgb& background);
std::shared_ptr<Denoiser> image_prompt_oracle(const NoiseSchedule& schedule);

// ---------------------------------------------------------------------------
// Trainable residual score model ε_φ = base + MLP(z_t, t, camera)

struct ResidualModelConfig {
    int hidden = 128;
    int time_embedding = 32;
    double learning_rate = 1e-3;
    std::uint64_t init_seed = 7;
    /// The noisy latent enters the network average-pooled to at most input_grid² cells per channel.
    int input_grid = 8;
    /// (t, ε) draws per training step; above 1 the timesteps are stratified over the range.
    int batch = 1;
};

class ResidualScoreModel final : public Denoiser {
public:
    static constexpr int kCameraEmbedding = 6;

    /// With a schedule, √SNR and log SNR of the timestep join the network input.
    ResidualScoreModel(std::shared_ptr<const Denoiser> base, const Tensor& latent_shape, ResidualModelConfig config = {},
                       std::optional<NoiseSchedule> schedule = std::nullopt);

    Tensor predict(const Tensor& noisy, int t, const DenoiserCondition& cond) const override;
    DenoiserKind kind() const override { return base_->kind(); }
    std::uint64_t state_hash() const override;

    /// Only the MLP term.
    Tensor residual(const Tensor& noisy, int t, const DenoiserCondition& cond) const;

    /// One Adam step on ‖ε_φ(z_t; y, t, c) − ε‖² with fresh (t, ε), averaged over the batch.
    /// Returns the loss before the update.
    double train_step(const Tensor& render_latent, const DenoiserCondition& cond, const NoiseSchedule& schedule,
                      const TimestepConfig& timesteps, Rng& rng);

    const ResidualModelConfig& config() const noexcept { return config_; }
    void set_learning_rate(double lr) { config_.learning_rate = lr; }
    std::size_t parameter_count() const noexcept { return params_.size(); }
    std::span<const double> parameters() const noexcept { return params_; }
    const Denoiser& base() const noexcept { return *base_; }

private:
    std::vector<double> build_input(const Tensor& noisy, int t, const DenoiserCondition& cond) const;

    std::shared_ptr<const Denoiser> base_;
    Tensor shape_;
    ResidualModelConfig config_;
    std::size_t in_dim_ = 0, out_dim_ = 0;
    int grid_h_ = 0, grid_w_ = 0;
    std::optional<NoiseSchedule> schedule_;
    // [W1 (hidden×in) | b1 | W2 (out×hidden) | b2]
    std::vector<double> params_, grads_, adam_m_, adam_v_;
    long step_ = 0;
};

/// Sinusoidal embedding of a timestep.
std::vector<double> timestep_embedding(int t, int dim);

}  // namespace distill3d
