#pragma once

#include "gpdf/camera.hpp"
#include "gpdf/explore.hpp"
#include "gpdf/field.hpp"
#include "gpdf/types.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace gpdf {

enum class PrimitiveKind { Sphere, Box, Capsule };

/// One analytic primitive with a uniform color and a material label.
struct Primitive {
    PrimitiveKind kind = PrimitiveKind::Sphere;
    Vec3 center = Vec3::Zero();        // sphere/box
    Vec3 half_extents = Vec3::Ones();  // box
    Vec3 cap_a = Vec3::Zero();         // capsule endpoints
    Vec3 cap_b = Vec3::UnitZ();
    double radius = 1.0;               // sphere/capsule
    Eigen::Vector3d color = Eigen::Vector3d::Ones();
    std::string material = "default";
    double extra_noise = 1.0;  // per-primitive multiplier on the depth noise

    double sdf(const Vec3& x) const;
    void validate() const;
};

/// Min-union of primitives; exact for disjoint shapes, a conservative bound
/// under overlap.
struct AnalyticScene {
    std::vector<Primitive> primitives;
    Vec3 workspace_lo = Vec3::Constant(-2.0);
    Vec3 workspace_hi = Vec3::Constant(2.0);

    void validate() const;

    /// Signed distance and the index of the closest primitive.
    std::pair<double, int> sdf(const Vec3& x) const;

    /// Outward normal by central differences on the scene SDF.
    Vec3 normal(const Vec3& x, double h = 1e-5) const;
};

/// Output of one virtual RGBD capture.
struct RgbdCapture {
    RenderedImage image;
    PointCloud cloud;                 // unprojected hit pixels with input covariance
    std::vector<int> primitive_ids;   // per cloud row
};

struct RgbdOptions {
    double noise_coeff = 0.0;  // sigma = noise_coeff * depth^2
    double hit_eps = 1e-6;
    int max_steps = 256;
    double t_min = 0.0;
    double t_max = 10.0;
};

/// Sphere-traces the analytic scene through the camera; depth noise grows with
/// the squared distance and the unprojected points carry the matching
/// diagonal input covariance. The generator is consumed in pixel order.
RgbdCapture virtual_rgbd(const AnalyticScene& scene, const CameraModel& camera,
                         const RgbdOptions& opts, std::mt19937_64& rng);

struct TouchSample {
    Vec3 point = Vec3::Zero();
    Vec3 normal = Vec3::UnitZ();
    std::string material;
    double noise_sigma = 5e-4;  // 0.5 mm
};

struct TouchOptions {
    double contact_tolerance = 1e-6;
    double travel_limit = 2.0;
    double noise_sigma = 5e-4;
    int max_steps = 256;
};

/// Marches from the approach point along -approach_normal until contact.
/// Throws NumericError when nothing is hit within the travel limit.
TouchSample virtual_touch(const AnalyticScene& scene, const Vec3& approach_point,
                          const Vec3& approach_normal, const TouchOptions& opts,
                          std::mt19937_64& rng);

/// Harness configuration (JSON-mirrored by the io module).
struct ExplorationConfig {
    AnalyticScene scene;
    CameraModel intrinsics;  // pose ignored; candidates/initial supply poses
    CameraModel initial_pose;
    std::vector<CameraModel> candidate_poses;
    double ig_stop = 1.0;
    double var_stop = 1e-4;
    int max_views = 4;
    int max_touches = 8;
    double noise_coeff = 0.01;
    uint64_t seed = 0;
    double length_scale = 0.0;  // 0: 2x median spacing of the initial cloud
    double voxel_size = 0.05;
    std::vector<double> ensemble_scales{0.5, 1.0, 2.0};
    int render_samples = 48;
    double touch_input_variance = 1e-6;  // (1 mm)^2
    std::string snapshot_dir;            // empty: no snapshots
};

struct ExplorationStepLog {
    int step = 0;
    std::string phase;  // "vision" | "touch"
    Vec3 chosen;        // camera position or touch point
    double max_ig = 0.0;
    double max_surface_var = 0.0;
};

struct ExplorationResult {
    GpdfModel model;
    std::vector<ExplorationStepLog> log;
};

/// Vision NBV loop followed by the tactile variance-descent loop, both bounded
/// by thresholds and budgets. Deterministic for a fixed seed.
ExplorationResult run_exploration(const ExplorationConfig& config);

/// Candidate poses on a view sphere: `azimuths` x `elevations` cameras looking
/// at the target.
std::vector<CameraModel> view_sphere_candidates(const Vec3& target, double distance,
                                                int azimuths, int elevations,
                                                const CameraModel& intrinsics);

}  // namespace gpdf
