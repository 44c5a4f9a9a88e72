#include "gpdf/explore.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <random>

namespace gpdf {

Ensemble Ensemble::from_cloud(const PointCloud& cloud, const KernelConfig& base,
                              const NoiseModel& noise,
                              const std::vector<double>& scale_multipliers) {
    if (scale_multipliers.empty())
        throw ValidationError("ensemble needs at least one scale multiplier");
    Ensemble ensemble;
    ensemble.members.reserve(scale_multipliers.size());
    for (const double mult : scale_multipliers) {
        KernelConfig cfg = base;
        cfg.length_scale = base.length_scale * mult;
        ensemble.members.push_back(GpdfModel::fit(cloud, cfg, noise));
    }
    return ensemble;
}

InformationGainResult information_gain(const Ensemble& ensemble, const CameraModel& camera,
                                       const InformationGainOptions& opts) {
    if (ensemble.members.empty()) throw ValidationError("information_gain: empty ensemble");
    const Eigen::Index m = ensemble.size();

    // Members must share one compositing transform; default the sigmoid
    // sharpness to the median member length scale.
    VolumetricOptions render_opts = opts.render;
    if (render_opts.s_sharpness <= 0.0) {
        std::vector<double> scales;
        scales.reserve(ensemble.members.size());
        for (const GpdfModel& member : ensemble.members)
            scales.push_back(member.kernel().length_scale);
        std::nth_element(scales.begin(), scales.begin() + scales.size() / 2, scales.end());
        render_opts.s_sharpness = 200.0 / scales[scales.size() / 2];
    }

    std::vector<RenderedImage> renders;
    renders.reserve(m);
    for (const GpdfModel& member : ensemble.members)
        renders.push_back(render_volumetric(member, camera, render_opts));

    const int h = camera.height;
    const int w = camera.width;
    InformationGainResult result;
    result.per_pixel = Eigen::MatrixXd::Zero(h, w);

    // Moment-matched Gaussian mixture entropy minus mean member entropy;
    // the 0.5 log(2 pi e) constants cancel.
    for (int v = 0; v < h; ++v) {
        for (int u = 0; u < w; ++u) {
            double gain = 0.0;
            // Color channels.
            const Eigen::MatrixXd RenderedImage::* color_ch[3] = {
                &RenderedImage::color_r, &RenderedImage::color_g, &RenderedImage::color_b};
            for (const auto ch : color_ch) {
                double mix_mean = 0.0, mix_second = 0.0, mean_log = 0.0;
                for (const auto& r : renders) {
                    const double mu = (r.*ch)(v, u);
                    const double var = std::max(r.color_var(v, u), opts.variance_floor);
                    mix_mean += mu;
                    mix_second += var + mu * mu;
                    mean_log += std::log(var);
                }
                mix_mean /= m;
                mix_second /= m;
                mean_log /= m;
                const double mix_var =
                    std::max(mix_second - mix_mean * mix_mean, opts.variance_floor);
                gain += opts.color_weight * 0.5 * (std::log(mix_var) - mean_log);
            }
            // Depth channel.
            {
                double mix_mean = 0.0, mix_second = 0.0, mean_log = 0.0;
                for (const auto& r : renders) {
                    const double mu = r.depth(v, u);
                    const double var = std::max(r.depth_var(v, u), opts.variance_floor);
                    mix_mean += mu;
                    mix_second += var + mu * mu;
                    mean_log += std::log(var);
                }
                mix_mean /= m;
                mix_second /= m;
                mean_log /= m;
                const double mix_var =
                    std::max(mix_second - mix_mean * mix_mean, opts.variance_floor);
                gain += opts.depth_weight * 0.5 * (std::log(mix_var) - mean_log);
            }
            gain = std::max(gain, 0.0);
            result.per_pixel(v, u) = gain;
            result.total += gain;
        }
    }
    return result;
}

NextBestView next_best_view(const Ensemble& ensemble, const std::vector<CameraModel>& candidates,
                            const InformationGainOptions& opts) {
    if (candidates.empty()) throw ValidationError("next_best_view: no candidate poses");
    NextBestView best;
    best.gains.reserve(candidates.size());
    for (size_t i = 0; i < candidates.size(); ++i) {
        const double gain = information_gain(ensemble, candidates[i], opts).total;
        best.gains.push_back(gain);
        if (i == 0 || gain > best.gain) {
            best.gain = gain;
            best.index = static_cast<Eigen::Index>(i);
        }
    }
    return best;
}

Vec3 tangential_variance_gradient(const GpdfModel& model, const Vec3& x) {
    const Vec3 g = model.variance_gradient(x);
    const Vec3 n = model.gradient(x);
    const double nn = n.norm();
    if (nn < 1e-14) return g;
    const Vec3 unit = n / nn;
    return g - g.dot(unit) * unit;
}

TouchTarget most_uncertain_surface_point(const GpdfModel& model,
                                         const TouchSearchOptions& opts) {
    if (opts.n_starts < 1) throw ValidationError("touch search requires n_starts >= 1");
    const double l = model.kernel().length_scale;
    const double step = opts.step > 0.0 ? opts.step : 0.1 * l;
    const double workspace_diam = (opts.workspace_hi - opts.workspace_lo).norm();
    const double tol =
        opts.surface_tolerance > 0.0 ? opts.surface_tolerance : 0.01 * workspace_diam;

    auto inside = [&](const Vec3& p) {
        return (p.array() >= opts.workspace_lo.array()).all() &&
               (p.array() <= opts.workspace_hi.array()).all();
    };
    auto surface_march = [&](Vec3 p, int iters) {
        for (int i = 0; i < iters; ++i) {
            const QueryResult q = model.query_distance(p, 0);
            const double gn = q.gradient.norm();
            if (gn < 1e-14) break;
            p -= q.distance * q.gradient / gn;
        }
        return p;
    };

    // Starts: jittered training points pushed half a length scale outward.
    std::mt19937 rng(opts.seed);
    std::normal_distribution<double> jitter(0.0, 0.05 * l);
    std::uniform_int_distribution<Eigen::Index> pick(0, model.size() - 1);

    TouchTarget best;
    bool any_converged = false;
    std::vector<Vec3> best_trace;

    for (int s = 0; s < opts.n_starts; ++s) {
        const Eigen::Index idx = pick(rng);
        Vec3 x = model.points().row(idx);
        x += Vec3(jitter(rng), jitter(rng), jitter(rng));
        {
            const Vec3 g = model.gradient(x);
            if (g.norm() > 1e-12) x += 0.5 * l * g.normalized();
        }

        std::vector<Vec3> trace{x};
        Vec3 momentum_prev = x;
        bool diverged = false;
        for (int k = 0; k < opts.iterations; ++k) {
            switch (opts.variant) {
                case AscentVariant::DualGoal: {
                    const QueryResult q = model.query_distance(x, 0);
                    const double gn = q.gradient.norm();
                    if (gn < 1e-14) { diverged = true; break; }
                    const Vec3 unit_n = q.gradient / gn;
                    const Vec3 g_var = model.variance_gradient(x);
                    const Vec3 s_tan = g_var - g_var.dot(unit_n) * unit_n;
                    const double momentum = (2.0 * k + 1.0) / (k + 2.0);
                    x = x - q.distance * unit_n + step * momentum * s_tan;
                    break;
                }
                case AscentVariant::ProjectedGradient: {
                    const Vec3 g_var = model.variance_gradient(x);
                    x = surface_march(x + step * g_var, 4);
                    break;
                }
                case AscentVariant::AcceleratedProjected: {
                    const Vec3 y = k == 0 ? x
                                          : x + (static_cast<double>(k) - 1.0) /
                                                    (static_cast<double>(k) + 2.0) *
                                                    (x - momentum_prev);
                    momentum_prev = x;
                    const Vec3 g_var = model.variance_gradient(y);
                    x = surface_march(y + step * g_var, 4);
                    break;
                }
            }
            if (!inside(x)) { diverged = true; break; }
            trace.push_back(x);
        }
        if (diverged) continue;

        // Land exactly on the surface before scoring.
        const Vec3 contact = surface_march(x, 3);
        if (!inside(contact)) continue;
        const QueryResult q = model.query_distance(contact, 0);
        if (std::abs(q.distance) > tol) continue;
        // Keep only reachable contacts: the outward normal ray must stay in
        // free space, which rejects points on interior sheets of the zero set.
        {
            const double gn = q.gradient.norm();
            if (gn < 1e-14) continue;
            const Vec3 outward = q.gradient / gn;
            bool blocked = false;
            for (int probe = 1; probe <= 4; ++probe) {
                const Vec3 p = contact + probe * 0.0625 * workspace_diam * outward;
                if (model.query_distance(p, 0).distance < 0.0) {
                    blocked = true;
                    break;
                }
            }
            if (blocked) continue;
        }
        const auto [mean, var] = model.query_occupancy(contact);
        (void)mean;
        if (!any_converged || var > best.variance) {
            any_converged = true;
            best.point = contact;
            best.normal = q.gradient.norm() > 1e-14 ? Vec3(q.gradient.normalized())
                                                    : Vec3::UnitZ();
            best.variance = var;
            best_trace = trace;
        }
    }

    if (!any_converged)
        throw NumericError("touch search: no start converged onto the surface inside the workspace");
    best.ascent_trace = std::move(best_trace);
    return best;
}

CameraModel touch_reference(const TouchTarget& target, double standoff) {
    CameraModel pose;
    pose.width = 1;
    pose.height = 1;
    pose.fx = pose.fy = 1.0;
    pose.translation = target.point + standoff * target.normal;
    // z axis anti-parallel to the surface normal (sensor approaches head-on).
    const Vec3 z = -target.normal;
    Vec3 ref = std::abs(z.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
    Vec3 x = ref.cross(z).normalized();
    const Vec3 y = z.cross(x);
    pose.rotation.col(0) = x;
    pose.rotation.col(1) = y;
    pose.rotation.col(2) = z;
    return pose;
}

Vec3 reference_velocity(const Vec3& reference_position, const Vec3& current_position,
                        double gain) {
    if (!(gain > 0.0)) throw ValidationError("reference velocity gain must be positive");
    return gain * (reference_position - current_position);
}

}  // namespace gpdf
