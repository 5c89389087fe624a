// SPDX-License-Identifier: Apache-2.0
// distill3d command-line front end.
#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <iostream>

#include "distill3d/checks.hpp"
#include "distill3d/errors.hpp"
#include "distill3d/pipeline.hpp"

namespace fs = std::filesystem;
using namespace distill3d;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

PipelineConfig load(const std::string& path, int workers) {
    PipelineConfig c = load_config(path);
    if (workers > 0) c.workers = workers;
    if (c.workers > 1) spdlog::warn("--workers {} > 1: runs are not bit-reproducible", c.workers);
    return c;
}

void print_summary(const RunSummary& s) {
    std::cout << "output: " << s.output_dir.string() << '\n';
    for (const auto& p : s.artifacts) std::cout << "  " << p.string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"distill3d: two-stage score-distillation 3D synthesis"};
    app.require_subcommand(1);
    int workers = 0;
    bool verbose = false;
    app.add_option("--workers", workers, "Render worker threads (determinism requires 1)")->check(CLI::PositiveNumber);
    app.add_flag("-v,--verbose", verbose, "Debug logging");

    std::string config_path, from, mesh_path, texture_path, out_dir = "turntable";
    bool allow_unseeded = false;
    int views = 8;

    auto* gen = app.add_subcommand("generate", "Run both stages");
    gen->add_option("--config", config_path, "Pipeline config (JSON)")->required();

    auto* s1 = app.add_subcommand("stage1", "Coarse radiance field with view-conditioned distillation");
    s1->add_option("--config", config_path, "Pipeline config (JSON)")->required();
    s1->add_option("--from", from, "Resume from a nerf checkpoint directory");

    auto* s2 = app.add_subcommand("stage2", "Mesh geometry and texture refinement");
    s2->add_option("--config", config_path, "Pipeline config (JSON)")->required();
    s2->add_option("--from", from, "Checkpoint directory (nerf, geometry or texture)")->required();
    s2->add_flag("--allow-unseeded", allow_unseeded, "Accept a tet grid not produced by the NeRF handoff");

    auto* render = app.add_subcommand("render", "Turntable of an exported mesh");
    render->add_option("--mesh", mesh_path, "OBJ mesh")->required();
    render->add_option("--texture", texture_path, "GRID3 texture field")->required();
    render->add_option("--out", out_dir, "Output directory");
    render->add_option("--views", views, "Number of views (>= 8)")->check(CLI::Range(8, 360));
    render->add_option("--config", config_path, "Take camera and background from this config");

    auto* check = app.add_subcommand("check", "Run the built-in invariant suite");

    std::string prompt_dir = ".";
    double radius = 0.6;
    auto* prompt = app.add_subcommand("prompt", "Write the analytic two-hemisphere sphere prompt images");
    prompt->add_option("--out", prompt_dir, "Output directory");
    prompt->add_option("--radius", radius, "Sphere radius")->check(CLI::Range(0.05, 0.95));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return e.get_exit_code() == 0 ? code : kExitConfig;
    }
    if (verbose) spdlog::set_level(spdlog::level::debug);

    try {
        if (*gen) {
            print_summary(generate(load(config_path, workers)));
        } else if (*s1) {
            const auto c = load(config_path, workers);
            print_summary(run_stage1(c, from.empty() ? std::nullopt : std::optional<fs::path>(from)));
        } else if (*s2) {
            print_summary(run_stage2(load(config_path, workers), from, allow_unseeded));
        } else if (*render) {
            CameraPolicy policy;
            Rgb background{1.0, 1.0, 1.0};
            if (!config_path.empty()) {
                const auto c = load_config(config_path);
                policy = c.camera;
                background = c.background;
            }
            print_summary(render_turntable(mesh_path, texture_path, out_dir, policy, background, views));
        } else if (*check) {
            const auto results = run_invariant_checks();
            bool ok = true;
            for (const auto& r : results) {
                std::printf("[%s] %s%s%s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.detail.empty() ? "" : ": ",
                            r.detail.c_str());
                ok &= r.passed;
            }
            return ok ? kExitOk : kExitRuntime;
        } else if (*prompt) {
            const auto written = write_sphere_prompts(prompt_dir, CameraPolicy{}, radius);
            for (const auto& p : written) std::cout << p.string() << '\n';
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitOk;
}
