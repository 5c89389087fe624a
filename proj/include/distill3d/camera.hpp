// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>

#include "distill3d/math.hpp"
#include "distill3d/rng.hpp"

namespace distill3d {

/// Pinhole camera. `rotation` maps camera axes to world axes (world <- camera);
/// the camera looks down its local -z with +y up.
struct CameraPose {
    Mat3 rotation;
    Vec3 position{0.0, 0.0, 2.2};
    double fov_y_deg = 50.0;
    int width = 64;
    int height = 64;

    /// Throws InvalidArgument when the rotation is not a proper rotation or fov is out of range.
    void validate() const;
    Vec3 forward() const { return -rotation.column(2); }
    double focal() const;  // 1/tan(fov_y/2)
    bool operator==(const CameraPose&) const = default;
};

struct Ray {
    Vec3 origin;
    Vec3 direction;  // unit length
};

/// Ray through the centre of pixel (px, py); row 0 is the top of the image.
Ray pixel_ray(const CameraPose& cam, int px, int py);

/// World point in camera coordinates (camera looks down -z).
inline Vec3 to_camera(const CameraPose& cam, const Vec3& world) {
    return cam.rotation.transposed() * (world - cam.position);
}

/// Continuous pixel coordinates of a camera-space point in front of the camera.
struct ScreenPoint {
    double x = 0.0, y = 0.0;
    double depth = 0.0;  // distance along the view axis
};
std::optional<ScreenPoint> project(const CameraPose& cam, const Vec3& camera_space);

/// Rigid transform applied to a camera in world space.
struct RelativePose {
    Mat3 R;
    Vec3 T;

    static RelativePose identity() { return {}; }
    void validate() const;
    bool operator==(const RelativePose&) const = default;
};

/// Rotation R·rotation, position R·position + T.
CameraPose apply_relative(const CameraPose& base, const RelativePose& rel);
/// The relative pose taking `base` to `target` (inverse of apply_relative).
RelativePose solve_relative(const CameraPose& base, const CameraPose& target);

/// Camera looking at the origin with +y up from spherical coordinates.
/// Azimuth 0, elevation 0 sits on +z.
CameraPose look_at_origin(double azimuth_deg, double elevation_deg, double radius, double fov_y_deg, int width,
                          int height);

struct CameraPolicy {
    double azimuth_min_deg = 0.0;
    double azimuth_max_deg = 360.0;
    double elevation_min_deg = -10.0;
    double elevation_max_deg = 45.0;
    double radius = 2.2;
    double fov_y_deg = 50.0;
    int width = 64;
    int height = 64;
    /// Viewpoint of the image prompt.
    double default_azimuth_deg = 0.0;
    double default_elevation_deg = 15.0;

    void validate() const;
    CameraPose default_pose() const {
        return look_at_origin(default_azimuth_deg, default_elevation_deg, radius, fov_y_deg, width, height);
    }
};

CameraPose sample_camera(Rng& rng, const CameraPolicy& policy);

/// Max-abs difference over rotation entries and position components.
double pose_distance(const CameraPose& a, const CameraPose& b);

}  // namespace distill3d
