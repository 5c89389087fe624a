// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "distill3d/diffusion.hpp"
#include "distill3d/raster.hpp"
#include "distill3d/tetmesh.hpp"
#include "distill3d/volume_render.hpp"

namespace distill3d {

struct ParameterGradient {
    std::string group;
    std::vector<double> values;
};

/// Named gradient buffers in a fixed order.
struct GradientSet {
    std::vector<ParameterGradient> groups;

    std::vector<double>* find(std::string_view group);
    const std::vector<double>* find(std::string_view group) const;
    std::vector<double>& add(std::string group, std::size_t size);
    double global_norm() const;
    void scale(double s);
};

/// A differentiable image producer: the rendered image, the camera it was taken
/// from, and the vector-Jacobian product back to its parameters.
class RenderState {
public:
    virtual ~RenderState() = default;
    virtual const Image& image() const = 0;
    virtual const CameraPose& camera() const = 0;
    virtual GradientSet backward(const Image& image_grad) const = 0;
};

/// Identity generator: the image itself is the parameter (group "image").
class ImageRenderState final : public RenderState {
public:
    explicit ImageRenderState(const Image& params, const CameraPose& cam = {});
    const Image& image() const override { return *image_; }
    const CameraPose& camera() const override { return camera_; }
    GradientSet backward(const Image& image_grad) const override;

private:
    const Image* image_;
    CameraPose camera_;
};

/// Voxel radiance field render (groups "density", "color").
class VolumeRenderState final : public RenderState {
public:
    VolumeRenderState(const Grid3& density, const Grid3& color, const CameraPose& cam,
                      const volume::RenderSettings& settings);
    const Image& image() const override { return image_; }
    const CameraPose& camera() const override { return camera_; }
    GradientSet backward(const Image& image_grad) const override;

private:
    const Grid3* density_;
    const Grid3* color_;
    CameraPose camera_;
    volume::RenderSettings settings_;
    Image image_;
};

/// Rasterized extracted mesh, exposing either its color or its normal map.
/// Groups: "texture" (color channel only), then "sdf" and "deform" when geometry
/// gradients are enabled. The tet grid, mesh and texture must outlive the state.
class MeshRenderState final : public RenderState {
public:
    enum class Channel { Rgb, Normal };

    /// Throws GeometryError("degenerate geometry") for an empty mesh.
    MeshRenderState(const TetGrid& grid, const SurfaceMesh& mesh, const Grid3& texture, const CameraPose& cam,
                    const Rgb& background, Channel channel, bool geometry_gradients = true, int workers = 1);
    const Image& image() const override {
        return channel_ == Channel::Rgb ? raster_.rgb : raster_.normal_map;
    }
    const CameraPose& camera() const override { return raster_.camera; }
    GradientSet backward(const Image& image_grad) const override;

    Channel channel() const noexcept { return channel_; }
    const raster::RasterOutput& raster() const noexcept { return raster_; }

private:
    const TetGrid* grid_;
    const SurfaceMesh* mesh_;
    const Grid3* texture_;
    Channel channel_;
    bool geometry_;
    raster::RasterOutput raster_;
};

struct DistillOptions {
    NoiseSchedule schedule = linear_schedule();
    TimestepConfig timesteps;
    Codec codec;
    /// Global-norm clip applied to every rule's gradient; ≤ 0 disables.
    double clip_norm = 10.0;
};

struct DistillStepReport {
    std::string rule;
    int t = 0;
    double weight = 0.0;
    /// ‖ε̂ − ε‖, or ‖ε_pretrain − ε_φ‖ for VSD.
    double residual_norm = 0.0;
    double duration_s = 0.0;
    /// Pre-clip norms per parameter group.
    std::vector<std::pair<std::string, double>> grad_norms;
    bool clipped = false;
    /// Eq.-2 loss of the interleaved residual update (VSD only).
    std::optional<double> residual_loss;
};

struct DistillStep {
    GradientSet gradients;
    DistillStepReport report;
};

DistillStep sds_grad(const RenderState& render, const Denoiser& denoiser, const DenoiserCondition& cond,
                     const DistillOptions& options, Rng& rng);

struct VsdOptions {
    /// Residual-model updates per VSD step, run after the gradient is formed.
    int residual_steps = 1;
};

/// Uses residual.base() as ε_pretrain. `cond.camera` is filled from the render when absent.
DistillStep vsd_grad(const RenderState& render, ResidualScoreModel& residual, const DenoiserCondition& cond,
                     const DistillOptions& options, Rng& rng, const VsdOptions& vsd = {});

/// The render must come from apply_relative(default_cam, rel); otherwise InvalidArgument.
DistillStep zero123_sds_grad(const RenderState& render, const Denoiser& zero123, const Image& reference,
                             const RelativePose& rel, const CameraPose& default_cam, const DistillOptions& options,
                             Rng& rng);

/// Render must be a normal-channel MeshRenderState.
DistillStep ipsd_geo_grad(const MeshRenderState& render, const Denoiser& ip, const ImagePromptEmbedding& y_n,
                          const std::vector<double>& y, const DistillOptions& options, Rng& rng);

/// Render must be a color-channel MeshRenderState. δ_geo must have been built for
/// the render's viewpoint (StaleStateError otherwise); an all-zero δ_geo may be unbound.
DistillStep ipsd_tex_grad(const MeshRenderState& render, const Denoiser& ip, const ImagePromptEmbedding& y_rgb,
                          const GeometryPromptDifference& delta_geo, const std::vector<double>& y,
                          const DistillOptions& options, Rng& rng);

/// Tolerance on pose agreement for the pose-checked rules.
inline constexpr double kPoseTolerance = 1e-5;

}  // namespace distill3d
