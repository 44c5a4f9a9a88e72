#include "gpdf/camera.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace gpdf {

void CameraModel::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw ValidationError("camera focal lengths must be positive");
    if (width < 1 || height < 1) throw ValidationError("camera image size must be positive");
    const Mat3 rtr = rotation.transpose() * rotation;
    if ((rtr - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9)
        throw ValidationError("camera rotation is not orthonormal");
    if (std::abs(rotation.determinant() - 1.0) > 1e-9)
        throw ValidationError("camera rotation must have determinant +1");
}

Eigen::Vector3d CameraModel::project(const Vec3& world_point) const {
    const Vec3 cam = rotation.transpose() * (world_point - translation);
    if (!(cam.z() > 0.0)) throw ValidationError("project: point is behind the camera");
    return {fx * cam.x() / cam.z() + cx, fy * cam.y() / cam.z() + cy, cam.z()};
}

Ray CameraModel::pixel_ray(double u, double v, double t_min, double t_max) const {
    Vec3 dir_cam((u - cx) / fx, (v - cy) / fy, 1.0);
    Ray ray;
    ray.origin = translation;
    ray.direction = (rotation * dir_cam).normalized();
    ray.t_min = t_min;
    ray.t_max = t_max;
    return ray;
}

CameraModel CameraModel::look_at(const Vec3& eye, const Vec3& target, const Vec3& up,
                                 double fx, double fy, double cx, double cy, int width,
                                 int height) {
    CameraModel cam;
    cam.fx = fx;
    cam.fy = fy;
    cam.cx = cx;
    cam.cy = cy;
    cam.width = width;
    cam.height = height;
    cam.translation = eye;

    Vec3 z = (target - eye).normalized();
    Vec3 x = up.cross(z);
    if (x.norm() < 1e-9) x = Vec3::UnitX().cross(z);
    if (x.norm() < 1e-9) x = Vec3::UnitY().cross(z);
    x.normalize();
    const Vec3 y = z.cross(x);
    cam.rotation.col(0) = x;
    cam.rotation.col(1) = y;
    cam.rotation.col(2) = z;
    return cam;
}

}  // namespace gpdf
