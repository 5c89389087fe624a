// SPDX-License-Identifier: Apache-2.0
#include "distill3d/camera.hpp"

#include <cmath>
#include <string>

#include "distill3d/errors.hpp"

namespace distill3d {

namespace {

void check_rotation(const Mat3& r, const char* what) {
    if (orthonormality_error(r) > 1e-6) throw InvalidArgument(std::string(what) + ": rotation not orthonormal");
    if (std::abs(r.determinant() - 1.0) > 1e-6) throw InvalidArgument(std::string(what) + ": rotation det != +1");
}

}  // namespace

void CameraPose::validate() const {
    check_rotation(rotation, "CameraPose");
    if (!(fov_y_deg > 10.0 && fov_y_deg < 120.0)) throw InvalidArgument("CameraPose: fov_y outside (10, 120) deg");
    if (width <= 0 || height <= 0) throw InvalidArgument("CameraPose: empty image size");
}

double CameraPose::focal() const { return 1.0 / std::tan(0.5 * deg2rad(fov_y_deg)); }

void RelativePose::validate() const { check_rotation(R, "RelativePose"); }

Ray pixel_ray(const CameraPose& cam, int px, int py) {
    const double aspect = double(cam.width) / cam.height;
    const double inv_f = 1.0 / cam.focal();
    const double sx = ((px + 0.5) / cam.width * 2.0 - 1.0) * inv_f * aspect;
    const double sy = (1.0 - (py + 0.5) / cam.height * 2.0) * inv_f;
    return {cam.position, normalized(cam.rotation * Vec3{sx, sy, -1.0})};
}

std::optional<ScreenPoint> project(const CameraPose& cam, const Vec3& q) {
    const double depth = -q.z;
    if (depth <= 1e-9) return std::nullopt;
    const double aspect = double(cam.width) / cam.height;
    const double f = cam.focal();
    const double ndc_x = q.x / depth * f / aspect;
    const double ndc_y = q.y / depth * f;
    return ScreenPoint{(ndc_x + 1.0) * 0.5 * cam.width, (1.0 - ndc_y) * 0.5 * cam.height, depth};
}

CameraPose apply_relative(const CameraPose& base, const RelativePose& rel) {
    CameraPose out = base;
    out.rotation = rel.R * base.rotation;
    out.position = rel.R * base.position + rel.T;
    return out;
}

RelativePose solve_relative(const CameraPose& base, const CameraPose& target) {
    RelativePose rel;
    rel.R = target.rotation * base.rotation.transposed();
    rel.T = target.position - rel.R * base.position;
    return rel;
}

CameraPose look_at_origin(double azimuth_deg, double elevation_deg, double radius, double fov_y_deg, int width,
                          int height) {
    const double az = deg2rad(azimuth_deg), el = deg2rad(elevation_deg);
    const Vec3 position{radius * std::cos(el) * std::sin(az), radius * std::sin(el), radius * std::cos(el) * std::cos(az)};
    // A rotation about y then x keeps the frame exactly orthonormal.
    CameraPose cam;
    cam.rotation = Mat3::rotation_y(az) * Mat3::rotation_x(-el);
    cam.position = position;
    cam.fov_y_deg = fov_y_deg;
    cam.width = width;
    cam.height = height;
    return cam;
}

void CameraPolicy::validate() const {
    if (!(azimuth_min_deg <= azimuth_max_deg) || azimuth_max_deg - azimuth_min_deg > 360.0)
        throw InvalidArgument("CameraPolicy: bad azimuth range");
    if (!(elevation_min_deg <= elevation_max_deg) || elevation_min_deg < -89.0 || elevation_max_deg > 89.0)
        throw InvalidArgument("CameraPolicy: bad elevation range");
    if (!(radius > std::sqrt(3.0))) throw InvalidArgument("CameraPolicy: radius must place the camera outside the cube");
    if (!(fov_y_deg > 10.0 && fov_y_deg < 120.0)) throw InvalidArgument("CameraPolicy: fov outside (10, 120)");
    if (width <= 0 || height <= 0) throw InvalidArgument("CameraPolicy: empty image size");
}

CameraPose sample_camera(Rng& rng, const CameraPolicy& policy) {
    policy.validate();
    const double az = rng.uniform(policy.azimuth_min_deg, policy.azimuth_max_deg);
    const double el = rng.uniform(policy.elevation_min_deg, policy.elevation_max_deg);
    return look_at_origin(az, el, policy.radius, policy.fov_y_deg, policy.width, policy.height);
}

double pose_distance(const CameraPose& a, const CameraPose& b) {
    double d = max_abs(a.position - b.position);
    for (int i = 0; i < 9; ++i) d = std::fmax(d, std::abs(a.rotation.m[i] - b.rotation.m[i]));
    return d;
}

}  // namespace distill3d
