#pragma once

#include "gpdf/camera.hpp"
#include "gpdf/field.hpp"
#include "gpdf/types.hpp"

#include <Eigen/Core>

#include <functional>
#include <optional>
#include <vector>

namespace gpdf {

/// Per-pixel render output. Depth 0 marks a miss.
struct RenderedImage {
    int width = 0, height = 0;
    Eigen::MatrixXd color_r, color_g, color_b;  // H x W in [0,1]
    Eigen::MatrixXd depth;                      // H x W, length units
    Eigen::MatrixXd color_var, depth_var;       // H x W, >= 0
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> hit_mask;

    void resize(int w, int h);
};

using SdfOracle = std::function<double(const Vec3&)>;

struct SphereTraceResult {
    Vec3 point = Vec3::Zero();
    double travelled = 0.0;
    int steps = 0;
};

/// Distance-aided ray marching: advance by the queried distance, report a hit
/// when it drops under hit_eps. Returns nullopt at t_max or the step budget.
std::optional<SphereTraceResult> sphere_trace(const SdfOracle& sdf, const Ray& ray,
                                              double hit_eps = 1e-4, int max_steps = 128);

enum class DepthCompositing {
    RayParameter,  // composite the sample's distance along the ray (default)
    SdfValue,      // composite the raw SDF sample, as the formula reads literally
};

struct VolumetricOptions {
    int n_samples = 64;
    double s_sharpness = 0.0;  // 0: use 200 / length_scale
    double t_min = 0.0;
    double t_max = 10.0;
    int refine_iters = 0;  // distance refinement per sample
    double hit_weight_threshold = 0.5;
    DepthCompositing depth_mode = DepthCompositing::RayParameter;
};

/// Sigmoid-opacity volumetric compositing of the model's distance field with
/// per-pixel color/depth variances. Colors come from the model's feature
/// field when present.
RenderedImage render_volumetric(const GpdfModel& model, const CameraModel& camera,
                                const VolumetricOptions& opts = {});

struct SphereTraceRenderOptions {
    double hit_eps = 1e-3;
    int max_steps = 96;
    double t_min = 0.0;
    double t_max = 10.0;
    int refine_iters = 2;
};

/// Sphere-traced render of the model; depth variance propagates the occupancy
/// variance through the reverting function at the hit point.
RenderedImage render_spheretrace(const GpdfModel& model, const CameraModel& camera,
                                 const SphereTraceRenderOptions& opts = {});

/// One reference view: a camera plus color and/or depth targets.
struct ReferenceView {
    CameraModel camera;
    std::optional<Eigen::MatrixXd> color_r, color_g, color_b;
    std::optional<Eigen::MatrixXd> depth;
};

struct RenderOptimizeOptions {
    int iterations = 500;
    double step = 2e-3;
    double depth_weight = 1.0;
    double color_weight = 1.0;
    VolumetricOptions render;
    bool optimize_colors = true;
    double min_step = 1e-9;
    int max_backtracks = 10;
};

struct RenderOptimizeResult {
    GpdfModel model;
    std::vector<double> loss_trace;  // loss after each accepted step
};

/// Photometric + depth optimization of the inducing cloud (positions, and
/// colors when present) against reference views. Backtracking keeps the loss
/// non-increasing over accepted steps.
RenderOptimizeResult optimize_by_rendering(const GpdfModel& model,
                                           const std::vector<ReferenceView>& views,
                                           const RenderOptimizeOptions& opts = {});

/// Loss gradient entry point, exposed for finite-difference validation.
struct RenderLossGradient {
    double loss = 0.0;
    PointMatrix position_grad;        // n x 3
    Eigen::MatrixXd color_grad;       // n x F (empty when no features)
};
RenderLossGradient render_loss_gradient(const GpdfModel& model,
                                        const std::vector<ReferenceView>& views,
                                        const RenderOptimizeOptions& opts);

}  // namespace gpdf
