// SPDX-License-Identifier: Apache-2.0
#include "distill3d/pipeline.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "distill3d/bridge.hpp"
#include "distill3d/errors.hpp"

namespace distill3d {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kStage2Stream = 0x9e3779b97f4a7c15ULL;

std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

void save_optimizers(const fs::path& path, std::initializer_list<const Adam*> opts) {
    std::ofstream out(path, std::ios::binary);
    for (const Adam* a : opts) a->save(out);
    if (!out) throw IoError("write failed: " + path.string());
}

void load_optimizers(const fs::path& path, std::initializer_list<Adam*> opts) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    for (Adam* a : opts) a->load(in);
}

bool all_finite(std::span<const float> v) {
    return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

std::string describe(const DistillStepReport& r) {
    return "last step: rule " + r.rule + ", t=" + std::to_string(r.t) + ", w=" + std::to_string(r.weight) +
           ", residual norm " + std::to_string(r.residual_norm);
}

Image load_prompt_image(const fs::path& path, const CameraPolicy& policy, const char* what) {
    Image img = read_png(path);
    if (img.width != policy.width || img.height != policy.height)
        throw ConfigError(std::string(what) + " " + path.string() + " is " + std::to_string(img.width) + "x" +
                          std::to_string(img.height) + ", render size is " + std::to_string(policy.width) + "x" +
                          std::to_string(policy.height));
    return img;
}

std::vector<double> flatten(const std::vector<Vec3>& v) {
    std::vector<double> out(v.size() * 3);
    for (std::size_t i = 0; i < v.size(); ++i)
        for (int a = 0; a < 3; ++a) out[i * 3 + a] = v[i][a];
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------

MetricsLog::MetricsLog(const fs::path& dir, bool append) {
    ensure_dir(dir);
    const auto mode = append ? std::ios::app : std::ios::trunc;
    metrics_.open(dir / "metrics.jsonl", std::ios::out | mode);
    timings_.open(dir / "timings.jsonl", std::ios::out | mode);
    if (!metrics_ || !timings_) throw IoError("cannot open metrics files in " + dir.string());
}

json report_to_json(const DistillStepReport& r) {
    json norms = json::object();
    for (const auto& [group, n] : r.grad_norms) norms[group] = n;
    json j{{"rule", r.rule},         {"t", r.t},           {"weight", r.weight},
           {"residual_norm", r.residual_norm}, {"grad_norms", norms}, {"clipped", r.clipped}};
    if (r.residual_loss) j["residual_loss"] = *r.residual_loss;
    return j;
}

void MetricsLog::write(const std::string& stage, int iteration, const DistillStepReport& report) {
    if (!metrics_.is_open()) return;
    json j{{"stage", stage}, {"iteration", iteration}};
    j.update(report_to_json(report));
    metrics_ << j.dump() << '\n';
    timings_ << json{{"stage", stage}, {"iteration", iteration}, {"duration_s", report.duration_s}}.dump() << '\n';
    metrics_.flush();
    timings_.flush();
}

// ---------------------------------------------------------------------------

double default_iso(double step) { return std::log(2.0) / step; }

TetGrid nerf_to_tetgrid(const Grid3& density, int tet_resolution, double iso) {
    if (density.channels() != 1) throw InvalidArgument("nerf_to_tetgrid: density grid must be scalar");
    TetGrid grid = build_tet_grid(tet_resolution);
    bool any_in = false, any_out = false;
    for (std::size_t v = 0; v < grid.vertices.size(); ++v) {
        const double s = iso - softplus(sample_trilinear(density, grid.vertices[v]).value[0]);
        grid.sdf[v] = s;
        any_in |= s < 0.0;
        any_out |= s > 0.0;
    }
    if (!any_in || !any_out)
        throw GeometryError("no surface at iso " + std::to_string(iso) + ": S is " + (any_in ? "negative" : "positive") +
                            " everywhere");
    grid.origin = TetGridOrigin::FromNerf;
    return grid;
}

Grid3 resample_grid(const Grid3& source, int resolution) {
    if (source.resolution() == resolution) return source;
    Grid3 out(resolution, source.channels());
    out.fill_from([&](const Vec3& p) { return sample_trilinear(source, p).value; });
    return out;
}

SurfaceMesh extract_surface(const TetGrid& grid) {
    SurfaceMesh mesh = marching_tets(grid);
    if (mesh.empty()) throw GeometryError("degenerate geometry: marching tetrahedra produced no faces");
    return mesh;
}

std::vector<CameraPose> turntable_cameras(const CameraPolicy& policy, int count) {
    std::vector<CameraPose> cams;
    for (int i = 0; i < count; ++i)
        cams.push_back(look_at_origin(policy.default_azimuth_deg + 360.0 * i / count, policy.default_elevation_deg,
                                      policy.radius, policy.fov_y_deg, policy.width, policy.height));
    return cams;
}

std::vector<fs::path> write_mesh_turntable(const fs::path& dir, const std::string& prefix, const SurfaceMesh& mesh,
                                           const Grid3& texture, const CameraPolicy& policy, const Rgb& background,
                                           int views, int workers) {
    ensure_dir(dir);
    std::vector<fs::path> paths;
    const auto cams = turntable_cameras(policy, views);
    for (std::size_t i = 0; i < cams.size(); ++i) {
        char name[64];
        std::snprintf(name, sizeof name, "%s_%02zu.png", prefix.c_str(), i);
        paths.push_back(dir / name);
        write_png(paths.back(), raster::rasterize(mesh, texture, cams[i], background, workers).rgb);
    }
    return paths;
}

std::vector<Rgb> vertex_colors(const SurfaceMesh& mesh, const Grid3& texture) {
    std::vector<Rgb> colors;
    colors.reserve(mesh.vertices.size());
    for (const Vec3& v : mesh.vertices) {
        const auto s = sample_trilinear(texture, v).value;
        colors.push_back({std::clamp(s[0], 0.0, 1.0), std::clamp(s[1], 0.0, 1.0), std::clamp(s[2], 0.0, 1.0)});
    }
    return colors;
}

std::string stage_tag_name(StageTag tag) {
    switch (tag) {
        case StageTag::Nerf: return "nerf";
        case StageTag::Geometry: return "geometry";
        case StageTag::Texture: return "texture";
    }
    return "nerf";
}

StageTag parse_stage_tag(const std::string& name) {
    if (name == "nerf") return StageTag::Nerf;
    if (name == "geometry") return StageTag::Geometry;
    if (name == "texture") return StageTag::Texture;
    throw IoError("unknown checkpoint stage '" + name + "'");
}

StageTag checkpoint_stage(const fs::path& dir) {
    const json j = read_json(dir / "stage.json");
    return parse_stage_tag(j.value("stage", std::string{}));
}

// ---------------------------------------------------------------------------
// Stage 1

Stage1Runner::Stage1Runner(const PipelineConfig& config, std::shared_ptr<const Denoiser> denoiser)
    : config_(config),
      denoiser_(std::move(denoiser)),
      options_(config.distill_options()),
      default_cam_(config.camera.default_pose()),
      density_(config.stage1.grid_resolution, 1, float(config.stage1.density_init)),
      color_(config.stage1.grid_resolution, 3, float(config.stage1.color_init)),
      density_opt_(AdamConfig{config.stage1.density_lr}),
      color_opt_(AdamConfig{config.stage1.color_lr}),
      rng_(config.seed) {
    reference_ = load_prompt_image(config.input_image, config.camera, "input_image");
    if (!denoiser_) {
        if (config.stage1.denoiser.source == DenoiserSpec::Source::Bridge)
            denoiser_ = bridge::remote_denoiser(config.stage1.denoiser.endpoint, DenoiserKind::Zero123);
        else
            denoiser_ = zero123_oracle(options_.schedule, AnalyticScene::two_hemisphere_sphere(config.stage1.scene_radius),
                                       default_cam_, options_.codec, config.background);
    }
}

double Stage1Runner::lr_factor() const {
    const int n = config_.stage1.iters;
    if (n <= 1) return 1.0;
    return std::pow(config_.stage1.lr_final_fraction, double(std::min(iteration_, n - 1)) / double(n - 1));
}

volume::RenderSettings Stage1Runner::eval_settings() const {
    volume::RenderSettings s;
    s.steps = config_.stage1.render_steps;
    s.background = config_.background;
    s.jitter = false;
    s.workers = config_.workers;
    return s;
}

Image Stage1Runner::render_view(const CameraPose& cam) const {
    return volume::render(density_, color_, cam, eval_settings());
}

void Stage1Runner::step() {
    const CameraPose sampled = sample_camera(rng_, config_.camera);
    const RelativePose rel = solve_relative(default_cam_, sampled);
    const CameraPose cam = apply_relative(default_cam_, rel);

    volume::RenderSettings settings = eval_settings();
    settings.jitter = true;
    settings.stratification_seed = mix(config_.seed ^ mix(std::uint64_t(iteration_)));
    const VolumeRenderState state(density_, color_, cam, settings);
    DistillStep s = zero123_sds_grad(state, *denoiser_, reference_, rel, default_cam_, options_, rng_);

    const double f = lr_factor();
    density_opt_.set_lr(config_.stage1.density_lr * f);
    color_opt_.set_lr(config_.stage1.color_lr * f);
    density_opt_.step(density_.values(), *s.gradients.find("density"));
    color_opt_.step(color_.values(), *s.gradients.find("color"));
    last_report_ = std::move(s.report);
    if (!all_finite(density_.values()) || !all_finite(color_.values()))
        throw std::runtime_error("stage1: non-finite parameters after iteration " + std::to_string(iteration_) + "; " +
                                 describe(last_report_));
    if (metrics_) metrics_->write("nerf", iteration_, last_report_);
    ++iteration_;
}

void Stage1Runner::run_until(int iteration) {
    while (iteration_ < iteration) step();
}

void Stage1Runner::save_checkpoint(const fs::path& dir) const {
    ensure_dir(dir);
    save_grid(dir / "density.grid3", density_);
    save_grid(dir / "color.grid3", color_);
    save_optimizers(dir / "optim.bin", {&density_opt_, &color_opt_});
    write_json(dir / "stage.json", {{"schema", kConfigSchema},
                                    {"stage", "nerf"},
                                    {"iteration", iteration_},
                                    {"seed", config_.seed},
                                    {"rng", rng_.save_state()}});
}

void Stage1Runner::load_checkpoint(const fs::path& dir) {
    const json j = read_json(dir / "stage.json");
    if (j.value("stage", std::string{}) != "nerf")
        throw IoError(dir.string() + ": not a nerf checkpoint (stage '" + j.value("stage", std::string{}) + "')");
    Grid3 density = load_grid(dir / "density.grid3");
    Grid3 color = load_grid(dir / "color.grid3");
    if (density.resolution() != config_.stage1.grid_resolution || color.resolution() != density.resolution())
        throw ConfigError(dir.string() + ": checkpoint grid resolution differs from stage1.grid_resolution");
    density_ = std::move(density);
    color_ = std::move(color);
    load_optimizers(dir / "optim.bin", {&density_opt_, &color_opt_});
    rng_.restore_state(j.at("rng").get<std::string>());
    iteration_ = j.at("iteration").get<int>();
}

void Stage1Runner::write_turntable(const fs::path& dir, const std::string& prefix, int views) const {
    ensure_dir(dir);
    const auto cams = turntable_cameras(config_.camera, views);
    for (std::size_t i = 0; i < cams.size(); ++i) {
        char name[64];
        std::snprintf(name, sizeof name, "%s_%02zu.png", prefix.c_str(), i);
        write_png(dir / name, render_view(cams[i]));
    }
}

// ---------------------------------------------------------------------------
// Stage 2

Stage2Runner::Stage2Runner(const PipelineConfig& config, std::shared_ptr<const Denoiser> denoiser)
    : config_(config),
      denoiser_(std::move(denoiser)),
      options_(config.distill_options()),
      default_cam_(config.camera.default_pose()),
      sdf_opt_(AdamConfig{config.stage2.sdf_lr}),
      deform_opt_(AdamConfig{config.stage2.deform_lr}),
      texture_opt_(AdamConfig{config.stage2.texture_lr}),
      rng_(config.seed ^ kStage2Stream) {
    if (!denoiser_) {
        if (config.stage2.denoiser.source == DenoiserSpec::Source::Bridge)
            denoiser_ = bridge::remote_denoiser(config.stage2.denoiser.endpoint, DenoiserKind::ImagePrompt);
        else
            denoiser_ = image_prompt_oracle(options_.schedule);
    }
    init_prompts();
}

Stage2Runner::Stage2Runner(const PipelineConfig& config, TetGrid grid, Grid3 texture, bool allow_unseeded,
                           std::shared_ptr<const Denoiser> denoiser)
    : Stage2Runner(config, std::move(denoiser)) {
    if (grid.origin != TetGridOrigin::FromNerf && !allow_unseeded)
        throw InvalidArgument("stage2: tet grid was not produced by nerf_to_tetgrid (pass the override to accept it)");
    if (texture.channels() != 3) throw InvalidArgument("stage2: texture grid must have 3 channels");
    grid_ = std::move(grid);
    texture_ = resample_grid(texture, config.stage2.texture_resolution);
}

void Stage2Runner::init_prompts() {
    const Image rgb = load_prompt_image(config_.input_image, config_.camera, "input_image");
    const Image normal = config_.input_normal ? load_prompt_image(*config_.input_normal, config_.camera, "input_normal")
                                              : normal_from_rgb(rgb);
    y_rgb_ = embed_image(rgb, config_.stage2.patches);
    y_n_ = embed_image(normal, config_.stage2.patches);
}

Stage2Runner::Phase Stage2Runner::phase() const noexcept {
    if (iteration_ < config_.stage2.geometry_iters) return Phase::Geometry;
    if (iteration_ < config_.stage2.geometry_iters + config_.stage2.texture_iters) return Phase::Texture;
    return Phase::Done;
}

void Stage2Runner::apply_geometry(const GradientSet& g, double scale) {
    const auto* gs = g.find("sdf");
    const auto* gd = g.find("deform");
    if (!gs || !gd) return;
    sdf_opt_.set_lr(config_.stage2.sdf_lr * scale);
    deform_opt_.set_lr(config_.stage2.deform_lr * scale);
    sdf_opt_.step(std::span<double>(grid_.sdf), *gs);
    std::vector<double> d = flatten(grid_.deform);
    deform_opt_.step(std::span<double>(d), *gd);
    for (std::size_t i = 0; i < grid_.deform.size(); ++i) grid_.deform[i] = {d[i * 3], d[i * 3 + 1], d[i * 3 + 2]};
    grid_.clamp_deformation();
}

void Stage2Runner::step() {
    const Phase ph = phase();
    if (ph == Phase::Done) return;
    SurfaceMesh mesh = extract_surface(grid_);

    if (ph == Phase::Geometry) {
        const CameraPose cam = sample_camera(rng_, config_.camera);
        const MeshRenderState state(grid_, mesh, texture_, cam, config_.background, MeshRenderState::Channel::Normal,
                                    true, config_.workers);
        DistillStep s = ipsd_geo_grad(state, *denoiser_, y_n_, config_.text_embedding, options_, rng_);
        const int n = config_.stage2.geometry_iters;
        const double decay =
            n > 1 ? std::pow(config_.stage2.geometry_lr_final_fraction, double(iteration_) / double(n - 1)) : 1.0;
        apply_geometry(s.gradients, decay);
        last_report_ = std::move(s.report);
        if (metrics_) metrics_->write("geometry", iteration_, last_report_);
    } else {
        const int j = iteration_ - config_.stage2.geometry_iters;
        if (j % config_.stage2.delta_geo_refresh == 0 || !y_n_def_) {
            const auto def = raster::rasterize(mesh, texture_, default_cam_, config_.background, config_.workers);
            y_n_def_ = embed_image(def.normal_map, config_.stage2.patches);
        }
        const CameraPose cam = sample_camera(rng_, config_.camera);
        const bool geo = config_.stage2.refine_geometry_in_texture_phase;
        const MeshRenderState state(grid_, mesh, texture_, cam, config_.background, MeshRenderState::Channel::Rgb, geo,
                                    config_.workers);
        GeometryPromptDifference delta =
            geometry_prompt_difference(embed_image(state.raster().normal_map, config_.stage2.patches), *y_n_def_);
        delta.view = cam;
        DistillStep s = ipsd_tex_grad(state, *denoiser_, y_rgb_, delta, config_.text_embedding, options_, rng_);
        texture_opt_.step(texture_.values(), *s.gradients.find("texture"));
        if (geo) apply_geometry(s.gradients, config_.stage2.texture_phase_geometry_scale);
        last_report_ = std::move(s.report);
        if (!all_finite(texture_.values()))
            throw std::runtime_error("stage2: non-finite texture after iteration " + std::to_string(iteration_) + "; " +
                                     describe(last_report_));
        if (metrics_) metrics_->write("texture", iteration_, last_report_);
    }
    for (double s : grid_.sdf)
        if (!std::isfinite(s))
            throw std::runtime_error("stage2: non-finite SDF after iteration " + std::to_string(iteration_) + "; " +
                                     describe(last_report_));
    ++iteration_;
}

void Stage2Runner::run_to_end() {
    while (phase() != Phase::Done) step();
}

void Stage2Runner::save_checkpoint(const fs::path& dir) const {
    ensure_dir(dir);
    save_tet_grid(dir / "grid.tetgrid", grid_);
    save_grid(dir / "texture.grid3", texture_);
    save_optimizers(dir / "optim.bin", {&sdf_opt_, &deform_opt_, &texture_opt_});
    json j{{"schema", kConfigSchema},
           {"stage", phase() == Phase::Geometry ? "geometry" : "texture"},
           {"iteration", iteration_},
           {"seed", config_.seed},
           {"tet_resolution", grid_.resolution},
           {"rng", rng_.save_state()}};
    if (y_n_def_) j["y_n_def"] = y_n_def_->vector;
    write_json(dir / "stage.json", j);
}

Stage2Runner Stage2Runner::resume(const PipelineConfig& config, const fs::path& dir,
                                  std::shared_ptr<const Denoiser> denoiser) {
    const json j = read_json(dir / "stage.json");
    const StageTag tag = parse_stage_tag(j.value("stage", std::string{}));
    if (tag == StageTag::Nerf) throw InvalidArgument("Stage2Runner::resume: nerf checkpoints go through the handoff");
    Stage2Runner r(config, std::move(denoiser));
    r.grid_ = load_tet_grid(dir / "grid.tetgrid");
    r.texture_ = load_grid(dir / "texture.grid3");
    load_optimizers(dir / "optim.bin", {&r.sdf_opt_, &r.deform_opt_, &r.texture_opt_});
    r.rng_.restore_state(j.at("rng").get<std::string>());
    r.iteration_ = j.at("iteration").get<int>();
    if (j.contains("y_n_def")) r.y_n_def_ = ImagePromptEmbedding{config.stage2.patches, j["y_n_def"].get<std::vector<double>>()};
    if (r.grid_.origin != TetGridOrigin::FromNerf)
        spdlog::warn("resuming stage 2 from a tet grid that was not seeded from a NeRF");
    return r;
}

std::vector<fs::path> Stage2Runner::export_artifacts(const fs::path& dir) const {
    ensure_dir(dir);
    SurfaceMesh mesh = extract_surface(grid_);
    export_mesh(mesh, vertex_colors(mesh, texture_), dir / "mesh.obj");
    save_grid(dir / "texture.grid3", texture_);
    std::vector<fs::path> out{dir / "mesh.obj", dir / "mesh.ply", dir / "texture.grid3"};
    const auto pngs = write_mesh_turntable(dir, "turntable", mesh, texture_, config_.camera, config_.background,
                                           config_.stage2.turntable_views, config_.workers);
    out.insert(out.end(), pngs.begin(), pngs.end());
    return out;
}

// ---------------------------------------------------------------------------

namespace {

fs::path checkpoint_dir(const PipelineConfig& c, const std::string& name) { return c.output_dir / "checkpoints" / name; }

RunSummary finish_stage1(const PipelineConfig& config, Stage1Runner& runner) {
    const int every = config.checkpoint_every;
    while (!runner.done()) {
        runner.step();
        const int it = runner.iteration();
        if (every > 0 && it % every == 0 && !runner.done())
            runner.save_checkpoint(checkpoint_dir(config, "nerf_" + std::to_string(it)));
        if (config.stage1.turntable_every > 0 && it % config.stage1.turntable_every == 0)
            runner.write_turntable(config.output_dir / "stage1", "iter" + std::to_string(it));
        if (it % 50 == 0 || runner.done())
            spdlog::info("stage1 {}/{}: t={} residual={:.4g}", it, config.stage1.iters, runner.last_report().t,
                         runner.last_report().residual_norm);
    }
    runner.save_checkpoint(checkpoint_dir(config, "nerf"));
    runner.write_turntable(config.output_dir / "stage1", "turntable");
    return {config.output_dir, {checkpoint_dir(config, "nerf")}};
}

RunSummary finish_stage2(const PipelineConfig& config, Stage2Runner& runner) {
    const int every = config.checkpoint_every;
    const int total = config.stage2.geometry_iters + config.stage2.texture_iters;
    while (runner.phase() != Stage2Runner::Phase::Done) {
        runner.step();
        const int it = runner.iteration();
        if (every > 0 && it % every == 0 && it < total)
            runner.save_checkpoint(checkpoint_dir(config, "stage2_" + std::to_string(it)));
        if (it % 50 == 0 || it == total)
            spdlog::info("stage2 {}/{}: rule={} t={} residual={:.4g}", it, total, runner.last_report().rule,
                         runner.last_report().t, runner.last_report().residual_norm);
    }
    runner.save_checkpoint(checkpoint_dir(config, "texture"));
    return {config.output_dir, runner.export_artifacts(config.output_dir)};
}

Stage2Runner handoff(const PipelineConfig& config, const Grid3& density, const Grid3& color) {
    const double iso = config.stage2.iso.value_or(default_iso(config.stage2.iso_reference_length));
    TetGrid grid = nerf_to_tetgrid(density, config.stage2.tet_resolution, iso);
    spdlog::info("handoff: iso {:.4g}, tet resolution {}", iso, config.stage2.tet_resolution);
    return Stage2Runner(config, std::move(grid), color);
}

}  // namespace

RunSummary run_stage1(const PipelineConfig& config, const std::optional<fs::path>& resume) {
    MetricsLog log(config.output_dir, resume.has_value());
    Stage1Runner runner(config);
    if (resume) runner.load_checkpoint(*resume);
    runner.set_metrics(&log);
    return finish_stage1(config, runner);
}

RunSummary run_stage2(const PipelineConfig& config, const fs::path& from, bool allow_unseeded) {
    MetricsLog log(config.output_dir, true);
    const StageTag tag = checkpoint_stage(from);
    if (tag == StageTag::Nerf) {
        Stage2Runner runner = handoff(config, load_grid(from / "density.grid3"), load_grid(from / "color.grid3"));
        runner.set_metrics(&log);
        return finish_stage2(config, runner);
    }
    Stage2Runner runner = Stage2Runner::resume(config, from);
    if (runner.grid().origin != TetGridOrigin::FromNerf && !allow_unseeded)
        throw InvalidArgument("stage2: checkpoint tet grid was not produced by nerf_to_tetgrid");
    runner.set_metrics(&log);
    return finish_stage2(config, runner);
}

RunSummary generate(const PipelineConfig& config) {
    MetricsLog log(config.output_dir, false);
    Stage1Runner s1(config);
    s1.set_metrics(&log);
    finish_stage1(config, s1);
    Stage2Runner s2 = handoff(config, s1.density(), s1.color());
    s2.set_metrics(&log);
    return finish_stage2(config, s2);
}

std::vector<fs::path> write_sphere_prompts(const fs::path& dir, const CameraPolicy& policy, double radius) {
    ensure_dir(dir);
    const AnalyticScene scene = AnalyticScene::two_hemisphere_sphere(radius);
    const CameraPose cam = policy.default_pose();
    write_png(dir / "sphere_rgb.png", render_analytic(scene, cam, {1.0, 1.0, 1.0}));
    write_png(dir / "sphere_normal.png", render_analytic_normals(scene, cam));
    return {dir / "sphere_rgb.png", dir / "sphere_normal.png"};
}

RunSummary render_turntable(const fs::path& mesh_path, const fs::path& texture_path, const fs::path& out_dir,
                            const CameraPolicy& policy, const Rgb& background, int views) {
    const SurfaceMesh mesh = read_obj(mesh_path);
    const Grid3 texture = load_grid(texture_path);
    if (texture.channels() != 3) throw InvalidArgument(texture_path.string() + ": texture grid must have 3 channels");
    return {out_dir, write_mesh_turntable(out_dir, "turntable", mesh, texture, policy, background, views)};
}

}  // namespace distill3d
