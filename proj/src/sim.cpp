#include "gpdf/sim.hpp"

#include "gpdf/downsample.hpp"
#include "gpdf/updates.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace gpdf {

void Primitive::validate() const {
    switch (kind) {
        case PrimitiveKind::Sphere:
            if (!(radius > 0.0)) throw ValidationError("sphere radius must be positive");
            break;
        case PrimitiveKind::Box:
            if ((half_extents.array() <= 0.0).any())
                throw ValidationError("box half-extents must be positive");
            break;
        case PrimitiveKind::Capsule:
            if (!(radius > 0.0)) throw ValidationError("capsule radius must be positive");
            if ((cap_a - cap_b).norm() == 0.0)
                throw ValidationError("capsule endpoints must differ");
            break;
    }
    if ((color.array() < 0.0).any() || (color.array() > 1.0).any())
        throw ValidationError("primitive colors must lie in [0,1]");
}

double Primitive::sdf(const Vec3& x) const {
    switch (kind) {
        case PrimitiveKind::Sphere:
            return (x - center).norm() - radius;
        case PrimitiveKind::Box: {
            const Vec3 q = (x - center).cwiseAbs() - half_extents;
            const Vec3 outside = q.cwiseMax(0.0);
            return outside.norm() + std::min(q.maxCoeff(), 0.0);
        }
        case PrimitiveKind::Capsule: {
            const Vec3 pa = x - cap_a;
            const Vec3 ba = cap_b - cap_a;
            const double h = std::clamp(pa.dot(ba) / ba.squaredNorm(), 0.0, 1.0);
            return (pa - h * ba).norm() - radius;
        }
    }
    return 0.0;
}

void AnalyticScene::validate() const {
    if (primitives.empty()) throw ValidationError("scene has no primitives");
    for (const Primitive& p : primitives) p.validate();
    if ((workspace_hi.array() <= workspace_lo.array()).any())
        throw ValidationError("workspace box is empty");
}

std::pair<double, int> AnalyticScene::sdf(const Vec3& x) const {
    double best = std::numeric_limits<double>::infinity();
    int id = -1;
    for (size_t i = 0; i < primitives.size(); ++i) {
        const double d = primitives[i].sdf(x);
        if (d < best) {
            best = d;
            id = static_cast<int>(i);
        }
    }
    return {best, id};
}

Vec3 AnalyticScene::normal(const Vec3& x, double h) const {
    Vec3 g;
    for (int c = 0; c < 3; ++c) {
        Vec3 hi = x, lo = x;
        hi(c) += h;
        lo(c) -= h;
        g(c) = (sdf(hi).first - sdf(lo).first) / (2.0 * h);
    }
    const double n = g.norm();
    return n > 0.0 ? Vec3(g / n) : Vec3::UnitZ();
}

RgbdCapture virtual_rgbd(const AnalyticScene& scene, const CameraModel& camera,
                         const RgbdOptions& opts, std::mt19937_64& rng) {
    scene.validate();
    camera.validate();
    std::normal_distribution<double> gauss(0.0, 1.0);

    RgbdCapture capture;
    capture.image.resize(camera.width, camera.height);
    std::vector<Vec3> points;
    std::vector<Vec3> variances;
    std::vector<Eigen::Vector3d> colors;

    const SdfOracle sdf = [&](const Vec3& p) { return scene.sdf(p).first; };
    for (int v = 0; v < camera.height; ++v) {
        for (int u = 0; u < camera.width; ++u) {
            const Ray ray = camera.pixel_ray(u + 0.5, v + 0.5, opts.t_min, opts.t_max);
            const auto hit = sphere_trace(sdf, ray, opts.hit_eps, opts.max_steps);
            if (!hit) continue;
            const double depth_true = opts.t_min + hit->travelled;
            const int prim = scene.sdf(hit->point).second;
            const double sigma =
                opts.noise_coeff * depth_true * depth_true * scene.primitives[prim].extra_noise;
            const double depth = sigma > 0.0 ? depth_true + sigma * gauss(rng) : depth_true;

            capture.image.hit_mask(v, u) = true;
            capture.image.depth(v, u) = depth;
            capture.image.depth_var(v, u) = sigma * sigma;
            const Eigen::Vector3d color = scene.primitives[prim].color;
            capture.image.color_r(v, u) = color(0);
            capture.image.color_g(v, u) = color(1);
            capture.image.color_b(v, u) = color(2);

            const Vec3 point = ray.at(depth);
            // Diagonal bound of the rank-one covariance sigma^2 d d^T.
            const Vec3 var = sigma * sigma * ray.direction.cwiseProduct(ray.direction);
            points.push_back(point);
            variances.push_back(var);
            colors.push_back(color);
            capture.primitive_ids.push_back(prim);
        }
    }

    const Eigen::Index n = static_cast<Eigen::Index>(points.size());
    capture.cloud.points.resize(n, 3);
    PointMatrix var(n, 3);
    Eigen::MatrixXd feat(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
        capture.cloud.points.row(i) = points[i];
        var.row(i) = variances[i];
        feat.row(i) = colors[i];
    }
    capture.cloud.input_variance = var;
    capture.cloud.features = feat;
    return capture;
}

TouchSample virtual_touch(const AnalyticScene& scene, const Vec3& approach_point,
                          const Vec3& approach_normal, const TouchOptions& opts,
                          std::mt19937_64& rng) {
    scene.validate();
    const double nn = approach_normal.norm();
    if (nn < 1e-12) throw ValidationError("virtual_touch: approach normal is zero");
    const Vec3 dir = -approach_normal / nn;

    double travelled = 0.0;
    Vec3 pos = approach_point;
    for (int step = 0; step < opts.max_steps; ++step) {
        const double d = scene.sdf(pos).first;
        if (std::abs(d) < opts.contact_tolerance) {
            TouchSample sample;
            const int prim = scene.sdf(pos).second;
            std::normal_distribution<double> gauss(0.0, opts.noise_sigma);
            sample.point = pos + Vec3(gauss(rng), gauss(rng), gauss(rng));
            sample.normal = scene.normal(pos);
            sample.material = scene.primitives[prim].material;
            sample.noise_sigma = opts.noise_sigma;
            return sample;
        }
        const double advance = std::max(std::abs(d) * 0.9, opts.contact_tolerance * 0.5);
        pos += advance * dir;
        travelled += advance;
        if (travelled > opts.travel_limit) break;
    }
    throw NumericError("virtual_touch: no contact within the travel limit");
}

std::vector<CameraModel> view_sphere_candidates(const Vec3& target, double distance,
                                                int azimuths, int elevations,
                                                const CameraModel& intrinsics) {
    std::vector<CameraModel> poses;
    constexpr double pi = std::numbers::pi;
    for (int e = 0; e < elevations; ++e) {
        const double elev = pi / 6.0 * (e + 1);
        for (int a = 0; a < azimuths; ++a) {
            const double az = 2.0 * pi * a / azimuths;
            const Vec3 eye = target + distance * Vec3(std::cos(elev) * std::cos(az),
                                                      std::cos(elev) * std::sin(az),
                                                      std::sin(elev));
            poses.push_back(CameraModel::look_at(eye, target, Vec3::UnitZ(), intrinsics.fx,
                                                 intrinsics.fy, intrinsics.cx, intrinsics.cy,
                                                 intrinsics.width, intrinsics.height));
        }
    }
    return poses;
}

namespace {

// Voxel-condense one capture, keeping the nearest raw point's color and a
// combined cell + sensor variance per emitted sample.
PointCloud condense_capture(const PointCloud& raw, double voxel_size) {
    VoxelGrid grid(voxel_size);
    grid.accumulate(raw.points);
    PointCloud means = grid.emit_samples(DownsampleMode::MeanOnly);

    const Eigen::Index n = means.size();
    Eigen::MatrixXd feat(n, raw.features->cols());
    PointMatrix var(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::Index nearest = 0;
        double best = std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < raw.points.rows(); ++j) {
            const double d = (raw.points.row(j) - means.points.row(i)).squaredNorm();
            if (d < best) {
                best = d;
                nearest = j;
            }
        }
        feat.row(i) = raw.features->row(nearest);
        var.row(i) = raw.input_variance->row(nearest) +
                     means.input_variance->row(i);
    }
    means.features = std::move(feat);
    means.input_variance = std::move(var);
    return means;
}

PointCloud merge_clouds(const PointCloud& a, const PointCloud& b) {
    PointCloud out;
    out.points.resize(a.points.rows() + b.points.rows(), 3);
    out.points.topRows(a.points.rows()) = a.points;
    out.points.bottomRows(b.points.rows()) = b.points;
    PointMatrix var(out.points.rows(), 3);
    var.topRows(a.points.rows()) = *a.input_variance;
    var.bottomRows(b.points.rows()) = *b.input_variance;
    out.input_variance = std::move(var);
    Eigen::MatrixXd feat(out.points.rows(), a.features->cols());
    feat.topRows(a.points.rows()) = *a.features;
    feat.bottomRows(b.points.rows()) = *b.features;
    out.features = std::move(feat);
    return out;
}

GpdfModel fit_vision_model(const PointCloud& cloud, double length_scale) {
    KernelConfig kernel;
    kernel.kind = KernelKind::MaternHalf;
    kernel.length_scale = length_scale;
    NoiseModel noise;
    noise.mode = NoiseMode::NoisyInput;
    noise.refit_iterations = 1;
    return GpdfModel::fit(cloud, kernel, noise);
}

// Fixed probe points on the model's estimated surface: rays from a view
// sphere traced inward.
PointMatrix surface_probes(const GpdfModel& model, const Vec3& center, double radius,
                           int count) {
    std::vector<Vec3> hits;
    constexpr double pi = std::numbers::pi;
    const double golden = pi * (3.0 - std::sqrt(5.0));
    const SdfOracle sdf = [&](const Vec3& p) { return model.distance_only(p, 1); };
    for (int i = 0; i < count; ++i) {
        const double z = 1.0 - 2.0 * (i + 0.5) / count;
        const double r = std::sqrt(std::max(1.0 - z * z, 0.0));
        const double theta = golden * i;
        const Vec3 dir(r * std::cos(theta), r * std::sin(theta), z);
        Ray ray;
        ray.origin = center + radius * dir;
        ray.direction = -dir;
        ray.t_min = 0.0;
        ray.t_max = 2.0 * radius;
        if (const auto hit = sphere_trace(sdf, ray, 1e-3, 64)) hits.push_back(hit->point);
    }
    PointMatrix out(static_cast<Eigen::Index>(hits.size()), 3);
    for (size_t i = 0; i < hits.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = hits[i];
    return out;
}

double max_occupancy_variance(const GpdfModel& model, const PointMatrix& probes) {
    double best = 0.0;
    for (Eigen::Index i = 0; i < probes.rows(); ++i) {
        const auto [mean, var] = model.query_occupancy(probes.row(i));
        best = std::max(best, var);
    }
    return best;
}

}  // namespace

ExplorationResult run_exploration(const ExplorationConfig& config) {
    config.scene.validate();
    if (config.candidate_poses.empty())
        throw ValidationError("exploration config has no candidate poses");
    if (config.max_views < 0 || config.max_touches < 0)
        throw ValidationError("exploration budgets must be non-negative");

    std::mt19937_64 rng(config.seed);
    RgbdOptions rgbd;
    rgbd.noise_coeff = config.noise_coeff;
    rgbd.t_max = (config.scene.workspace_hi - config.scene.workspace_lo).norm();

    ExplorationResult result;
    int step = 0;

    RgbdCapture capture = virtual_rgbd(config.scene, config.initial_pose, rgbd, rng);
    if (capture.cloud.size() == 0) throw ValidationError("initial pose sees no geometry");
    PointCloud working = condense_capture(capture.cloud, config.voxel_size);

    const double l = config.length_scale > 0.0 ? config.length_scale
                                               : default_length_scale(working.points);
    GpdfModel model = fit_vision_model(working, l);

    KernelConfig base_kernel;
    base_kernel.kind = KernelKind::MaternHalf;
    base_kernel.length_scale = l;
    NoiseModel ens_noise;
    ens_noise.mode = NoiseMode::NoisyInput;
    ens_noise.refit_iterations = 1;

    InformationGainOptions ig_opts;
    ig_opts.render.n_samples = config.render_samples;
    ig_opts.render.t_max = rgbd.t_max;

    const Vec3 scene_center = 0.5 * (config.scene.workspace_lo + config.scene.workspace_hi);
    const double probe_radius =
        0.5 * (config.scene.workspace_hi - config.scene.workspace_lo).norm();

    {
        Ensemble ens =
            Ensemble::from_cloud(working, base_kernel, ens_noise, config.ensemble_scales);
        ExplorationStepLog log;
        log.step = step++;
        log.phase = "vision";
        log.chosen = config.initial_pose.translation;
        log.max_ig = next_best_view(ens, config.candidate_poses, ig_opts).gain;
        log.max_surface_var =
            max_occupancy_variance(model, surface_probes(model, scene_center, probe_radius, 128));
        result.log.push_back(log);
    }

    // Vision phase: greedy next-best-view until the gain threshold or budget.
    for (int view = 0; view < config.max_views; ++view) {
        Ensemble ens =
            Ensemble::from_cloud(working, base_kernel, ens_noise, config.ensemble_scales);
        const NextBestView nbv = next_best_view(ens, config.candidate_poses, ig_opts);
        if (nbv.gain < config.ig_stop) break;

        const CameraModel& chosen = config.candidate_poses[nbv.index];
        RgbdCapture next = virtual_rgbd(config.scene, chosen, rgbd, rng);
        if (next.cloud.size() > 0) {
            working = merge_clouds(working, condense_capture(next.cloud, config.voxel_size));
            model = fit_vision_model(working, l);
        }

        ExplorationStepLog log;
        log.step = step++;
        log.phase = "vision";
        log.chosen = chosen.translation;
        log.max_ig = nbv.gain;
        log.max_surface_var =
            max_occupancy_variance(model, surface_probes(model, scene_center, probe_radius, 128));
        result.log.push_back(log);
    }

    // Touch phase: incremental contacts at the most uncertain surface points.
    // Probes stay fixed so the logged maximum is comparable across touches.
    const PointMatrix probes = surface_probes(model, scene_center, probe_radius, 256);
    TouchSearchOptions touch_opts;
    touch_opts.workspace_lo = config.scene.workspace_lo;
    touch_opts.workspace_hi = config.scene.workspace_hi;
    touch_opts.seed = static_cast<unsigned>(config.seed + 17);
    TouchOptions contact_opts;
    contact_opts.travel_limit = rgbd.t_max;

    for (int touch = 0; touch < config.max_touches; ++touch) {
        if (max_occupancy_variance(model, probes) < config.var_stop) break;

        TouchTarget target;
        try {
            target = most_uncertain_surface_point(model, touch_opts);
        } catch (const NumericError&) {
            break;
        }
        TouchSample sample;
        try {
            sample = virtual_touch(config.scene, target.point + 0.2 * target.normal,
                                   target.normal, contact_opts, rng);
        } catch (const NumericError&) {
            break;
        }

        PointCloud contact;
        contact.points.resize(1, 3);
        contact.points.row(0) = sample.point;
        PointMatrix cvar(1, 3);
        cvar.row(0).setConstant(config.touch_input_variance);
        contact.input_variance = cvar;
        contact.features = Eigen::MatrixXd::Zero(1, working.features->cols());
        model = add_points(model, contact);
        working = merge_clouds(working, contact);

        ExplorationStepLog log;
        log.step = step++;
        log.phase = "touch";
        log.chosen = sample.point;
        log.max_ig = 0.0;
        log.max_surface_var = max_occupancy_variance(model, probes);
        result.log.push_back(log);
    }

    result.model = std::move(model);
    return result;
}

}  // namespace gpdf
