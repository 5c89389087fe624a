// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "distill3d/config.hpp"
#include "distill3d/distill.hpp"
#include "distill3d/optim.hpp"

namespace distill3d {

/// Appends one JSON object per distillation step to `metrics.jsonl`. Wall-clock
/// durations go to a sibling `timings.jsonl` so the metrics file is reproducible.
class MetricsLog {
public:
    MetricsLog() = default;
    MetricsLog(const std::filesystem::path& dir, bool append);
    void write(const std::string& stage, int iteration, const DistillStepReport& report);
    bool is_open() const noexcept { return metrics_.is_open(); }

private:
    std::ofstream metrics_;
    std::ofstream timings_;
};

nlohmann::json report_to_json(const DistillStepReport& report);

/// softplus level at which a segment of length `step` has opacity 1/2.
double default_iso(double step);

/// S = iso − softplus(density(v)) at every canonical tet vertex, ΔV = 0, origin FromNerf.
/// Throws GeometryError("no surface at iso") when S has a single sign.
TetGrid nerf_to_tetgrid(const Grid3& density, int tet_resolution, double iso);

/// Resamples a 3-channel grid onto a new resolution by trilinear lookup.
Grid3 resample_grid(const Grid3& source, int resolution);

/// marching_tets plus vertex normals; throws GeometryError("degenerate geometry") when empty.
SurfaceMesh extract_surface(const TetGrid& grid);

/// `count` cameras evenly spaced in azimuth at the default elevation.
std::vector<CameraPose> turntable_cameras(const CameraPolicy& policy, int count);

/// Writes `<prefix>_NN.png` for every turntable view of a textured mesh.
std::vector<std::filesystem::path> write_mesh_turntable(const std::filesystem::path& dir, const std::string& prefix,
                                                        const SurfaceMesh& mesh, const Grid3& texture,
                                                        const CameraPolicy& policy, const Rgb& background, int views,
                                                        int workers = 1);

/// Per-vertex colors sampled from the texture field, clamped to [0,1].
std::vector<Rgb> vertex_colors(const SurfaceMesh& mesh, const Grid3& texture);

enum class StageTag { Nerf, Geometry, Texture };
std::string stage_tag_name(StageTag tag);
StageTag parse_stage_tag(const std::string& name);

/// Reads the `stage` field of a checkpoint directory.
StageTag checkpoint_stage(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------

/// Coarse radiance-field stage driven by the view-conditioned denoiser.
class Stage1Runner {
public:
    /// `denoiser` overrides the one selected by the config.
    explicit Stage1Runner(const PipelineConfig& config, std::shared_ptr<const Denoiser> denoiser = nullptr);

    void step();
    void run_until(int iteration);
    int iteration() const noexcept { return iteration_; }
    bool done() const noexcept { return iteration_ >= config_.stage1.iters; }

    const Grid3& density() const noexcept { return density_; }
    const Grid3& color() const noexcept { return color_; }
    const DistillStepReport& last_report() const noexcept { return last_report_; }
    const Image& reference() const noexcept { return reference_; }
    const PipelineConfig& config() const noexcept { return config_; }
    const Rng& rng() const noexcept { return rng_; }

    /// Deterministic render (no jitter) of the current field.
    Image render_view(const CameraPose& cam) const;
    volume::RenderSettings eval_settings() const;

    void set_metrics(MetricsLog* log) noexcept { metrics_ = log; }
    void save_checkpoint(const std::filesystem::path& dir) const;
    void load_checkpoint(const std::filesystem::path& dir);
    void write_turntable(const std::filesystem::path& dir, const std::string& prefix, int views = 8) const;

private:
    double lr_factor() const;

    PipelineConfig config_;
    std::shared_ptr<const Denoiser> denoiser_;
    DistillOptions options_;
    CameraPose default_cam_;
    Image reference_;
    Grid3 density_, color_;
    Adam density_opt_, color_opt_;
    Rng rng_;
    int iteration_ = 0;
    DistillStepReport last_report_;
    MetricsLog* metrics_ = nullptr;
};

/// Mesh stage: geometry refinement from the normal prompt, then texture refinement
/// from the color prompt compensated by δ_geo.
class Stage2Runner {
public:
    enum class Phase { Geometry, Texture, Done };

    /// Rejects grids not produced by nerf_to_tetgrid unless `allow_unseeded` is set.
    Stage2Runner(const PipelineConfig& config, TetGrid grid, Grid3 texture, bool allow_unseeded = false,
                 std::shared_ptr<const Denoiser> denoiser = nullptr);
    /// Resumes from a geometry or texture checkpoint.
    static Stage2Runner resume(const PipelineConfig& config, const std::filesystem::path& checkpoint,
                               std::shared_ptr<const Denoiser> denoiser = nullptr);

    void step();
    void run_to_end();
    Phase phase() const noexcept;
    /// Steps taken in this stage, geometry and texture phases combined.
    int iteration() const noexcept { return iteration_; }

    const TetGrid& grid() const noexcept { return grid_; }
    const Grid3& texture() const noexcept { return texture_; }
    const DistillStepReport& last_report() const noexcept { return last_report_; }
    const ImagePromptEmbedding& y_rgb() const noexcept { return y_rgb_; }
    const ImagePromptEmbedding& y_n() const noexcept { return y_n_; }
    const PipelineConfig& config() const noexcept { return config_; }
    SurfaceMesh mesh() const { return extract_surface(grid_); }

    void set_metrics(MetricsLog* log) noexcept { metrics_ = log; }
    void save_checkpoint(const std::filesystem::path& dir) const;
    /// mesh.obj, mesh.ply, texture.grid3 and turntable PNGs.
    std::vector<std::filesystem::path> export_artifacts(const std::filesystem::path& dir) const;

private:
    Stage2Runner(const PipelineConfig& config, std::shared_ptr<const Denoiser> denoiser);
    void init_prompts();
    void apply_geometry(const GradientSet& g, double scale);

    PipelineConfig config_;
    std::shared_ptr<const Denoiser> denoiser_;
    DistillOptions options_;
    CameraPose default_cam_;
    TetGrid grid_;
    Grid3 texture_;
    Adam sdf_opt_, deform_opt_, texture_opt_;
    Rng rng_;
    int iteration_ = 0;
    ImagePromptEmbedding y_rgb_, y_n_;
    std::optional<ImagePromptEmbedding> y_n_def_;
    DistillStepReport last_report_;
    MetricsLog* metrics_ = nullptr;
};

// ---------------------------------------------------------------------------
// Orchestration used by the command-line front end.

struct RunSummary {
    std::filesystem::path output_dir;
    std::vector<std::filesystem::path> artifacts;
};

/// Stage 1 from scratch, or resumed from a nerf checkpoint.
RunSummary run_stage1(const PipelineConfig& config, const std::optional<std::filesystem::path>& resume = {});
/// Stage 2 from a nerf checkpoint (handoff) or a geometry/texture checkpoint (resume).
RunSummary run_stage2(const PipelineConfig& config, const std::filesystem::path& from, bool allow_unseeded = false);
/// Writes sphere_rgb.png and sphere_normal.png: the default view of the analytic
/// two-hemisphere sphere and its normal map.
std::vector<std::filesystem::path> write_sphere_prompts(const std::filesystem::path& dir, const CameraPolicy& policy,
                                                        double radius);
/// Both stages in one process.
RunSummary generate(const PipelineConfig& config);
/// Turntable of an existing mesh and texture grid.
RunSummary render_turntable(const std::filesystem::path& mesh_path, const std::filesystem::path& texture_path,
                            const std::filesystem::path& out_dir, const CameraPolicy& policy, const Rgb& background,
                            int views);

}  // namespace distill3d
