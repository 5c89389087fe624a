// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "distill3d/camera.hpp"
#include "distill3d/diffusion.hpp"
#include "distill3d/distill.hpp"

namespace distill3d {

inline constexpr int kConfigSchema = 1;

/// Which denoiser drives a stage: the built-in analytic oracle or a bridge endpoint.
struct DenoiserSpec {
    enum class Source { Oracle, Bridge };
    Source source = Source::Oracle;
    std::string endpoint;  // bridge only
};

struct Stage1Config {
    int iters = 400;
    int grid_resolution = 32;
    double density_lr = 0.1;
    double color_lr = 0.05;
    /// Multiplicative learning-rate factor reached at the last iteration (exponential decay).
    double lr_final_fraction = 0.1;
    int render_steps = 64;
    double density_init = -1.0;
    double color_init = 0.5;
    int turntable_every = 0;
    DenoiserSpec denoiser;
    /// Reference scene of the view-conditioned oracle.
    double scene_radius = 0.6;
};

struct Stage2Config {
    int geometry_iters = 300;
    int texture_iters = 300;
    int tet_resolution = 32;
    int texture_resolution = 32;
    double sdf_lr = 0.01;
    double deform_lr = 0.002;
    /// Geometry-phase learning-rate factor reached at its last iteration (exponential decay).
    double geometry_lr_final_fraction = 1.0;
    double texture_lr = 0.02;
    double texture_phase_geometry_scale = 0.1;
    bool refine_geometry_in_texture_phase = true;
    int delta_geo_refresh = 10;
    int patches = 8;
    /// Handoff iso on softplus(density); unset means ln 2 / iso_reference_length.
    std::optional<double> iso;
    /// Path length over which the iso density reaches opacity 1/2.
    double iso_reference_length = 0.5;
    int turntable_views = 8;
    DenoiserSpec denoiser;
};

struct PipelineConfig {
    std::filesystem::path source;  // config file, empty when built in code
    std::filesystem::path input_image;
    std::optional<std::filesystem::path> input_normal;
    std::filesystem::path output_dir = "out";
    std::uint64_t seed = 0;
    int workers = 1;
    int checkpoint_every = 0;

    CameraPolicy camera;
    Rgb background{1.0, 1.0, 1.0};
    int num_steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 2e-2;
    TimestepConfig timesteps;
    /// Empty selects identity up to 64² and avgpool-2 above.
    std::string codec;
    double clip_norm = 10.0;
    std::vector<double> text_embedding;

    Stage1Config stage1;
    Stage2Config stage2;

    NoiseSchedule schedule() const;
    Codec resolved_codec() const;
    DistillOptions distill_options() const;
    /// Range and consistency checks; throws ConfigError.
    void validate() const;
};

/// Parses a schema-1 config. Relative paths resolve against `base_dir`. When
/// `check_paths` is set, referenced input files must exist.
PipelineConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir, bool check_paths = true);
/// Reads and parses a config file; every failure is a ConfigError naming the path.
PipelineConfig load_config(const std::filesystem::path& path);
nlohmann::json config_to_json(const PipelineConfig& config);

}  // namespace distill3d
