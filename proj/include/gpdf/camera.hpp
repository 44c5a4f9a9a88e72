#pragma once

#include "gpdf/types.hpp"

#include <Eigen/Core>

#include <optional>

namespace gpdf {

struct Ray {
    Vec3 origin = Vec3::Zero();
    Vec3 direction = Vec3::UnitZ();  // unit length
    double t_min = 0.0;
    double t_max = 10.0;

    Vec3 at(double t) const { return origin + t * direction; }
};

/// Pinhole camera. `rotation`/`translation` map camera coordinates to world
/// coordinates; the extrinsic [R|t] of the projection equation is the inverse
/// of this pose. Camera looks along +z.
struct CameraModel {
    double fx = 1.0, fy = 1.0;
    double cx = 0.0, cy = 0.0;
    int width = 0, height = 0;
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    void validate() const;

    /// Projects a world point; returns (u, v, s) with s the camera-frame depth.
    /// Throws ValidationError when the point is behind the camera (s <= 0).
    Eigen::Vector3d project(const Vec3& world_point) const;

    /// Ray through pixel (u, v), unit direction in world coordinates.
    Ray pixel_ray(double u, double v, double t_min = 0.0, double t_max = 10.0) const;

    /// Camera placed at `eye` looking at `target` (+z toward the target).
    static CameraModel look_at(const Vec3& eye, const Vec3& target, const Vec3& up,
                               double fx, double fy, double cx, double cy, int width, int height);
};

}  // namespace gpdf
