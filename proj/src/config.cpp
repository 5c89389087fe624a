// SPDX-License-Identifier: Apache-2.0
#include "distill3d/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

#include "distill3d/errors.hpp"

namespace distill3d {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::string& where, std::initializer_list<const char*> keys) {
    if (!obj.is_object()) throw ConfigError(where + ": expected an object");
    const std::set<std::string> allowed(keys.begin(), keys.end());
    for (const auto& [k, _] : obj.items())
        if (!allowed.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
}

template <class T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(where + "." + key + ": wrong type");
    }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : (base / path).lexically_normal();
}

DenoiserSpec parse_denoiser(const json& j, const std::string& where) {
    reject_unknown(j, where, {"source", "endpoint"});
    DenoiserSpec spec;
    const std::string source = j.value("source", std::string("oracle"));
    if (source == "oracle") {
        spec.source = DenoiserSpec::Source::Oracle;
    } else if (source == "bridge") {
        spec.source = DenoiserSpec::Source::Bridge;
        read(j, "endpoint", spec.endpoint, where);
    } else {
        throw ConfigError(where + ".source: expected 'oracle' or 'bridge', got '" + source + "'");
    }
    if (const char* env = std::getenv("DISTILL3D_BRIDGE_URL"); env && *env && spec.source == DenoiserSpec::Source::Bridge)
        spec.endpoint = env;
    if (spec.source == DenoiserSpec::Source::Bridge && spec.endpoint.empty())
        throw ConfigError(where + ": bridge denoiser needs an endpoint (or DISTILL3D_BRIDGE_URL)");
    return spec;
}

json denoiser_json(const DenoiserSpec& d) {
    if (d.source == DenoiserSpec::Source::Oracle) return {{"source", "oracle"}};
    return {{"source", "bridge"}, {"endpoint", d.endpoint}};
}

}  // namespace

NoiseSchedule PipelineConfig::schedule() const { return linear_schedule(num_steps, beta_start, beta_end); }

Codec PipelineConfig::resolved_codec() const {
    if (!codec.empty()) return Codec::parse(codec);
    return std::max(camera.width, camera.height) > 64 ? Codec::avgpool(2) : Codec::identity();
}

DistillOptions PipelineConfig::distill_options() const {
    DistillOptions o;
    o.schedule = schedule();
    o.timesteps = timesteps;
    o.codec = resolved_codec();
    o.clip_norm = clip_norm;
    return o;
}

void PipelineConfig::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError(m); };
    try {
        camera.validate();
        (void)schedule();
        (void)resolved_codec().latent_shape(camera.width, camera.height);
    } catch (const InvalidArgument& e) {
        fail(e.what());
    }
    if (workers < 1) fail("workers must be >= 1");
    if (checkpoint_every < 0) fail("checkpoint_every must be >= 0");
    if (!(timesteps.t_min_fraction > 0.0 && timesteps.t_min_fraction < timesteps.t_max_fraction &&
          timesteps.t_max_fraction <= 1.0))
        fail("diffusion: need 0 < t_min_fraction < t_max_fraction <= 1");
    if (stage1.iters < 1) fail("stage1.iters must be >= 1");
    if (stage1.grid_resolution < 4 || stage1.grid_resolution > 128) fail("stage1.grid_resolution must be in [4, 128]");
    if (stage1.render_steps < 16) fail("stage1.render_steps must be >= 16");
    if (!(stage1.lr_final_fraction > 0.0 && stage1.lr_final_fraction <= 1.0)) fail("stage1.lr_final_fraction must be in (0, 1]");
    if (!(stage2.geometry_lr_final_fraction > 0.0 && stage2.geometry_lr_final_fraction <= 1.0))
        fail("stage2.geometry_lr_final_fraction must be in (0, 1]");
    if (!(stage1.scene_radius > 0.0 && stage1.scene_radius < 1.0)) fail("stage1.scene_radius must be in (0, 1)");
    if (stage2.geometry_iters < 0 || stage2.texture_iters < 1) fail("stage2: geometry_iters >= 0 and texture_iters >= 1 required");
    if (stage2.tet_resolution < 8 || stage2.tet_resolution > 128) fail("stage2.tet_resolution must be in [8, 128]");
    if (stage2.texture_resolution < 2) fail("stage2.texture_resolution must be >= 2");
    if (!(stage2.iso_reference_length > 0.0)) fail("stage2.iso_reference_length must be > 0");
    if (stage2.delta_geo_refresh < 1) fail("stage2.delta_geo_refresh must be >= 1");
    if (stage2.patches < 1 || camera.width % stage2.patches || camera.height % stage2.patches)
        fail("stage2.patches must divide the render size");
    if (stage2.turntable_views < 8) fail("stage2.turntable_views must be >= 8");
    for (double lr : {stage1.density_lr, stage1.color_lr, stage2.sdf_lr, stage2.deform_lr, stage2.texture_lr,
                      stage2.texture_phase_geometry_scale})
        if (!(lr >= 0.0)) fail("learning rates must be non-negative");
}

PipelineConfig parse_config(const json& j, const std::filesystem::path& base_dir, bool check_paths) {
    reject_unknown(j, "config", {"schema", "seed", "input_image", "input_normal", "output_dir", "workers",
                                  "checkpoint_every", "background", "camera", "diffusion", "text_embedding", "stage1",
                                  "stage2"});
    if (!j.contains("schema") || j["schema"] != kConfigSchema)
        throw ConfigError("config: expected \"schema\": " + std::to_string(kConfigSchema));
    PipelineConfig c;
    std::string input, normal, out = "out";
    if (!j.contains("input_image")) throw ConfigError("config: missing input_image");
    read(j, "input_image", input, "config");
    read(j, "input_normal", normal, "config");
    read(j, "output_dir", out, "config");
    read(j, "seed", c.seed, "config");
    read(j, "workers", c.workers, "config");
    read(j, "checkpoint_every", c.checkpoint_every, "config");
    read(j, "background", c.background, "config");
    read(j, "text_embedding", c.text_embedding, "config");
    c.input_image = resolve(base_dir, input);
    if (!normal.empty()) c.input_normal = resolve(base_dir, normal);
    c.output_dir = resolve(base_dir, out);

    if (j.contains("camera")) {
        const json& cj = j["camera"];
        reject_unknown(cj, "camera", {"azimuth_range", "elevation_range", "radius", "fov_y_deg", "width", "height",
                                      "default_azimuth", "default_elevation"});
        std::array<double, 2> az{c.camera.azimuth_min_deg, c.camera.azimuth_max_deg};
        std::array<double, 2> el{c.camera.elevation_min_deg, c.camera.elevation_max_deg};
        read(cj, "azimuth_range", az, "camera");
        read(cj, "elevation_range", el, "camera");
        c.camera.azimuth_min_deg = az[0];
        c.camera.azimuth_max_deg = az[1];
        c.camera.elevation_min_deg = el[0];
        c.camera.elevation_max_deg = el[1];
        read(cj, "radius", c.camera.radius, "camera");
        read(cj, "fov_y_deg", c.camera.fov_y_deg, "camera");
        read(cj, "width", c.camera.width, "camera");
        read(cj, "height", c.camera.height, "camera");
        read(cj, "default_azimuth", c.camera.default_azimuth_deg, "camera");
        read(cj, "default_elevation", c.camera.default_elevation_deg, "camera");
    }
    if (j.contains("diffusion")) {
        const json& dj = j["diffusion"];
        reject_unknown(dj, "diffusion", {"num_steps", "beta_start", "beta_end", "t_min_fraction", "t_max_fraction",
                                         "weighting", "codec", "clip_norm"});
        read(dj, "num_steps", c.num_steps, "diffusion");
        read(dj, "beta_start", c.beta_start, "diffusion");
        read(dj, "beta_end", c.beta_end, "diffusion");
        read(dj, "t_min_fraction", c.timesteps.t_min_fraction, "diffusion");
        read(dj, "t_max_fraction", c.timesteps.t_max_fraction, "diffusion");
        read(dj, "codec", c.codec, "diffusion");
        read(dj, "clip_norm", c.clip_norm, "diffusion");
        std::string w = weighting_name(c.timesteps.weighting);
        read(dj, "weighting", w, "diffusion");
        try {
            c.timesteps.weighting = parse_weighting(w);
        } catch (const InvalidArgument& e) {
            throw ConfigError(std::string("diffusion.weighting: ") + e.what());
        }
    }
    if (j.contains("stage1")) {
        const json& s = j["stage1"];
        reject_unknown(s, "stage1", {"iters", "grid_resolution", "density_lr", "color_lr", "lr_final_fraction",
                                     "render_steps", "density_init", "color_init", "turntable_every", "denoiser",
                                     "scene_radius"});
        auto& o = c.stage1;
        read(s, "iters", o.iters, "stage1");
        read(s, "grid_resolution", o.grid_resolution, "stage1");
        read(s, "density_lr", o.density_lr, "stage1");
        read(s, "color_lr", o.color_lr, "stage1");
        read(s, "lr_final_fraction", o.lr_final_fraction, "stage1");
        read(s, "render_steps", o.render_steps, "stage1");
        read(s, "density_init", o.density_init, "stage1");
        read(s, "color_init", o.color_init, "stage1");
        read(s, "turntable_every", o.turntable_every, "stage1");
        read(s, "scene_radius", o.scene_radius, "stage1");
        if (s.contains("denoiser")) o.denoiser = parse_denoiser(s["denoiser"], "stage1.denoiser");
    }
    if (j.contains("stage2")) {
        const json& s = j["stage2"];
        reject_unknown(s, "stage2", {"geometry_iters", "texture_iters", "tet_resolution", "texture_resolution",
                                     "sdf_lr", "deform_lr", "geometry_lr_final_fraction", "texture_lr",
                                     "texture_phase_geometry_scale",
                                     "refine_geometry_in_texture_phase", "delta_geo_refresh", "patches", "iso",
                                     "iso_reference_length", "turntable_views", "denoiser"});
        auto& o = c.stage2;
        read(s, "geometry_iters", o.geometry_iters, "stage2");
        read(s, "texture_iters", o.texture_iters, "stage2");
        read(s, "tet_resolution", o.tet_resolution, "stage2");
        read(s, "texture_resolution", o.texture_resolution, "stage2");
        read(s, "sdf_lr", o.sdf_lr, "stage2");
        read(s, "deform_lr", o.deform_lr, "stage2");
        read(s, "geometry_lr_final_fraction", o.geometry_lr_final_fraction, "stage2");
        read(s, "texture_lr", o.texture_lr, "stage2");
        read(s, "texture_phase_geometry_scale", o.texture_phase_geometry_scale, "stage2");
        read(s, "refine_geometry_in_texture_phase", o.refine_geometry_in_texture_phase, "stage2");
        read(s, "delta_geo_refresh", o.delta_geo_refresh, "stage2");
        read(s, "patches", o.patches, "stage2");
        read(s, "turntable_views", o.turntable_views, "stage2");
        read(s, "iso_reference_length", o.iso_reference_length, "stage2");
        if (s.contains("iso")) {
            double iso = 0.0;
            read(s, "iso", iso, "stage2");
            o.iso = iso;
        }
        if (s.contains("denoiser")) o.denoiser = parse_denoiser(s["denoiser"], "stage2.denoiser");
    }
    c.validate();
    if (check_paths) {
        if (!std::filesystem::exists(c.input_image))
            throw ConfigError("input_image not found: " + c.input_image.string());
        if (c.input_normal && !std::filesystem::exists(*c.input_normal))
            throw ConfigError("input_normal not found: " + c.input_normal->string());
    }
    return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": invalid JSON (" + e.what() + ")");
    }
    try {
        PipelineConfig c = parse_config(j, path.parent_path(), true);
        c.source = path;
        return c;
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

json config_to_json(const PipelineConfig& c) {
    json j{{"schema", kConfigSchema},
           {"seed", c.seed},
           {"input_image", c.input_image.string()},
           {"output_dir", c.output_dir.string()},
           {"workers", c.workers},
           {"checkpoint_every", c.checkpoint_every},
           {"background", c.background},
           {"text_embedding", c.text_embedding}};
    if (c.input_normal) j["input_normal"] = c.input_normal->string();
    j["camera"] = {{"azimuth_range", {c.camera.azimuth_min_deg, c.camera.azimuth_max_deg}},
                   {"elevation_range", {c.camera.elevation_min_deg, c.camera.elevation_max_deg}},
                   {"radius", c.camera.radius},
                   {"fov_y_deg", c.camera.fov_y_deg},
                   {"width", c.camera.width},
                   {"height", c.camera.height},
                   {"default_azimuth", c.camera.default_azimuth_deg},
                   {"default_elevation", c.camera.default_elevation_deg}};
    j["diffusion"] = {{"num_steps", c.num_steps},
                      {"beta_start", c.beta_start},
                      {"beta_end", c.beta_end},
                      {"t_min_fraction", c.timesteps.t_min_fraction},
                      {"t_max_fraction", c.timesteps.t_max_fraction},
                      {"weighting", weighting_name(c.timesteps.weighting)},
                      {"codec", c.resolved_codec().name()},
                      {"clip_norm", c.clip_norm}};
    const auto& a = c.stage1;
    j["stage1"] = {{"iters", a.iters},
                   {"grid_resolution", a.grid_resolution},
                   {"density_lr", a.density_lr},
                   {"color_lr", a.color_lr},
                   {"lr_final_fraction", a.lr_final_fraction},
                   {"render_steps", a.render_steps},
                   {"density_init", a.density_init},
                   {"color_init", a.color_init},
                   {"turntable_every", a.turntable_every},
                   {"scene_radius", a.scene_radius},
                   {"denoiser", denoiser_json(a.denoiser)}};
    const auto& b = c.stage2;
    j["stage2"] = {{"geometry_iters", b.geometry_iters},
                   {"texture_iters", b.texture_iters},
                   {"tet_resolution", b.tet_resolution},
                   {"texture_resolution", b.texture_resolution},
                   {"sdf_lr", b.sdf_lr},
                   {"deform_lr", b.deform_lr},
                   {"geometry_lr_final_fraction", b.geometry_lr_final_fraction},
                   {"texture_lr", b.texture_lr},
                   {"texture_phase_geometry_scale", b.texture_phase_geometry_scale},
                   {"refine_geometry_in_texture_phase", b.refine_geometry_in_texture_phase},
                   {"delta_geo_refresh", b.delta_geo_refresh},
                   {"patches", b.patches},
                   {"turntable_views", b.turntable_views},
                   {"iso_reference_length", b.iso_reference_length},
                   {"denoiser", denoiser_json(b.denoiser)}};
    if (b.iso) j["stage2"]["iso"] = *b.iso;
    return j;
}

}  // namespace distill3d
