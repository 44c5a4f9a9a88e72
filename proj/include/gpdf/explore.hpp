#pragma once

#include "gpdf/camera.hpp"
#include "gpdf/field.hpp"
#include "gpdf/render.hpp"
#include "gpdf/types.hpp"

#include <Eigen/Core>

#include <vector>

namespace gpdf {

/// GPDF ensemble whose members differ in interpolation scale (and/or inducing
/// perturbations); disagreement between members drives information gain.
struct Ensemble {
    std::vector<GpdfModel> members;

    Eigen::Index size() const { return static_cast<Eigen::Index>(members.size()); }

    /// Members with length-scale multipliers (default {0.5, 1, 2}) around the
    /// base kernel.
    static Ensemble from_cloud(const PointCloud& cloud, const KernelConfig& base,
                               const NoiseModel& noise,
                               const std::vector<double>& scale_multipliers = {0.5, 1.0, 2.0});
};

struct InformationGainOptions {
    VolumetricOptions render;
    double color_weight = 1.0;
    double depth_weight = 1.0;
    double variance_floor = 1e-6;  // keeps per-pixel entropies finite
};

struct InformationGainResult {
    double total = 0.0;
    Eigen::MatrixXd per_pixel;  // H x W
};

/// Moment-matched ensemble information gain of a camera pose: mixture entropy
/// minus mean member entropy, per pixel, summed over color and depth channels.
InformationGainResult information_gain(const Ensemble& ensemble, const CameraModel& camera,
                                       const InformationGainOptions& opts = {});

struct NextBestView {
    Eigen::Index index = 0;
    double gain = 0.0;
    std::vector<double> gains;  // one per candidate
};

/// Argmax of information gain over the candidates; ties break to the lowest
/// index.
NextBestView next_best_view(const Ensemble& ensemble, const std::vector<CameraModel>& candidates,
                            const InformationGainOptions& opts = {});

enum class AscentVariant {
    ProjectedGradient,   // ascend, then project onto the surface by marching
    AcceleratedProjected,
    DualGoal,            // simultaneous surface pull and tangential ascent
};

struct TouchSearchOptions {
    int n_starts = 16;
    int iterations = 20;
    double step = 0.0;             // 0: 0.1 * length scale
    AscentVariant variant = AscentVariant::DualGoal;
    double surface_tolerance = 0.0;  // 0: 1% of the workspace diameter
    Vec3 workspace_lo = Vec3::Constant(-10.0);
    Vec3 workspace_hi = Vec3::Constant(10.0);
    unsigned seed = 1;
};

struct TouchTarget {
    Vec3 point = Vec3::Zero();
    Vec3 normal = Vec3::UnitZ();
    double variance = 0.0;
    std::vector<Vec3> ascent_trace;
};

/// Tangential projection of the variance gradient: the component of
/// d var / dx orthogonal to the surface normal.
Vec3 tangential_variance_gradient(const GpdfModel& model, const Vec3& x);

/// Multi-start ascent toward the most uncertain surface point. Starts are
/// training points pushed half a length scale outward along their normals.
TouchTarget most_uncertain_surface_point(const GpdfModel& model,
                                         const TouchSearchOptions& opts = {});

/// Sensor pose standing off the contact point along the normal, z axis
/// anti-parallel to it.
CameraModel touch_reference(const TouchTarget& target, double standoff);

/// Proportional reference velocity toward a target pose position.
Vec3 reference_velocity(const Vec3& reference_position, const Vec3& current_position,
                        double gain);

}  // namespace gpdf
