// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "distill3d/camera.hpp"
#include "distill3d/fields.hpp"
#include "distill3d/image.hpp"

namespace distill3d::volume {

struct RenderSettings {
    int steps = 64;
    Rgb background{1.0, 1.0, 1.0};
    /// Stratified jitter inside each ray segment; with jitter off every sample sits at its stratum centre.
    bool jitter = true;
    std::uint64_t stratification_seed = 0;
    int workers = 1;

    void validate() const;
};

/// Ray-marched alpha compositing of softplus(density) and color over [-1,1]^3.
/// Pixel values are clamped to [0,1] after compositing.
Image render(const Grid3& density, const Grid3& color, const CameraPose& cam, const RenderSettings& settings);

/// Gradients w.r.t. stored grid values, laid out like Grid3::values().
struct Gradients {
    std::vector<double> density;
    std::vector<double> color;
};

/// Reverse-mode derivative of render() for an image-shaped upstream gradient.
/// Re-marches every ray with the same strata as the forward pass.
Gradients render_backward(const Grid3& density, const Grid3& color, const CameraPose& cam,
                          const RenderSettings& settings, const Image& upstream);

/// Compositing weights T_i·alpha_i of a single ray plus the residual transmittance.
struct RayWeights {
    std::vector<double> weights;
    double residual_transmittance = 1.0;
};
RayWeights ray_weights(const Grid3& density, const CameraPose& cam, int px, int py, const RenderSettings& settings);

/// Entry/exit distances of a ray through the cube; false on a miss.
bool intersect_cube(const Ray& ray, double& t_near, double& t_far);

}  // namespace distill3d::volume
