#include "gpdf/render.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

namespace gpdf {

namespace {

constexpr double kAlphaCeil = 1.0 - 1e-12;

double sigmoid_s(double v, double sharp) { return 1.0 / (1.0 + std::exp(-sharp * v)); }

double sharpness_for(const GpdfModel& model, const VolumetricOptions& opts) {
    return opts.s_sharpness > 0.0 ? opts.s_sharpness : 200.0 / model.kernel().length_scale;
}

}  // namespace

void RenderedImage::resize(int w, int h) {
    width = w;
    height = h;
    color_r = Eigen::MatrixXd::Zero(h, w);
    color_g = Eigen::MatrixXd::Zero(h, w);
    color_b = Eigen::MatrixXd::Zero(h, w);
    depth = Eigen::MatrixXd::Zero(h, w);
    color_var = Eigen::MatrixXd::Zero(h, w);
    depth_var = Eigen::MatrixXd::Zero(h, w);
    hit_mask.setConstant(h, w, false);
}

std::optional<SphereTraceResult> sphere_trace(const SdfOracle& sdf, const Ray& ray,
                                              double hit_eps, int max_steps) {
    if (!(hit_eps > 0.0)) throw ValidationError("sphere_trace: hit_eps must be positive");
    double t = ray.t_min;
    for (int step = 0; step < max_steps; ++step) {
        const double d = sdf(ray.at(t));
        if (d < hit_eps) {
            SphereTraceResult hit;
            hit.point = ray.at(t);
            hit.travelled = t - ray.t_min;
            hit.steps = step + 1;
            return hit;
        }
        t += d;
        if (t > ray.t_max) return std::nullopt;
    }
    return std::nullopt;
}

RenderedImage render_volumetric(const GpdfModel& model, const CameraModel& camera,
                                const VolumetricOptions& opts) {
    camera.validate();
    if (opts.n_samples < 2) throw ValidationError("render_volumetric: need at least 2 samples");
    const double sharp = sharpness_for(model, opts);
    const int S = opts.n_samples;
    const double dt = (opts.t_max - opts.t_min) / static_cast<double>(S - 1);
    const bool has_color = model.feature_table() && model.feature_table()->cols() >= 3;

    RenderedImage img;
    img.resize(camera.width, camera.height);

    Eigen::VectorXd d(S);
    Eigen::MatrixXd c(S, 3);
    for (int v = 0; v < camera.height; ++v) {
        for (int u = 0; u < camera.width; ++u) {
            const Ray ray = camera.pixel_ray(u + 0.5, v + 0.5, opts.t_min, opts.t_max);
            for (int i = 0; i < S; ++i) {
                const Vec3 x = ray.at(opts.t_min + dt * i);
                d(i) = model.distance_only(x, opts.refine_iters);
                if (has_color) {
                    c.row(i) = model.infer_feature_field(x).head<3>().transpose();
                } else {
                    c.row(i).setZero();
                }
            }

            double transmittance = 1.0;
            double weight_sum = 0.0;
            Eigen::Vector3d color = Eigen::Vector3d::Zero();
            double depth = 0.0;
            Eigen::VectorXd w = Eigen::VectorXd::Zero(S);
            for (int i = 0; i + 1 < S; ++i) {
                const double so = sigmoid_s(d(i), sharp);
                const double sn = sigmoid_s(d(i + 1), sharp);
                const double alpha = std::clamp((so - sn) / std::max(so, 1e-300), 0.0, kAlphaCeil);
                w(i) = transmittance * alpha;
                transmittance *= 1.0 - alpha;
                weight_sum += w(i);
                color += w(i) * c.row(i).transpose();
                const double sample_depth =
                    opts.depth_mode == DepthCompositing::RayParameter ? opts.t_min + dt * i : d(i);
                depth += w(i) * sample_depth;
            }

            double cvar = 0.0;
            double dvar = 0.0;
            for (int i = 0; i + 1 < S; ++i) {
                if (w(i) == 0.0) continue;
                cvar += w(i) * (c.row(i).transpose() - color).squaredNorm() / 3.0;
                const double sample_depth =
                    opts.depth_mode == DepthCompositing::RayParameter ? opts.t_min + dt * i : d(i);
                dvar += w(i) * (sample_depth - depth) * (sample_depth - depth);
            }

            img.color_r(v, u) = color(0);
            img.color_g(v, u) = color(1);
            img.color_b(v, u) = color(2);
            img.depth(v, u) = depth;
            img.color_var(v, u) = cvar;
            img.depth_var(v, u) = dvar;
            img.hit_mask(v, u) = weight_sum > opts.hit_weight_threshold;
        }
    }
    return img;
}

RenderedImage render_spheretrace(const GpdfModel& model, const CameraModel& camera,
                                 const SphereTraceRenderOptions& opts) {
    camera.validate();
    RenderedImage img;
    img.resize(camera.width, camera.height);
    const bool has_color = model.feature_table() && model.feature_table()->cols() >= 3;
    const SdfOracle sdf = [&](const Vec3& p) { return model.distance_only(p, opts.refine_iters); };

    for (int v = 0; v < camera.height; ++v) {
        for (int u = 0; u < camera.width; ++u) {
            Ray ray = camera.pixel_ray(u + 0.5, v + 0.5, opts.t_min, opts.t_max);
            const auto hit = sphere_trace(sdf, ray, opts.hit_eps, opts.max_steps);
            if (!hit) continue;
            img.hit_mask(v, u) = true;
            img.depth(v, u) = ray.t_min + hit->travelled;
            if (has_color) {
                const Eigen::VectorXd f = model.infer_feature_field(hit->point);
                img.color_r(v, u) = f(0);
                img.color_g(v, u) = f(1);
                img.color_b(v, u) = f(2);
            }
            const auto [omean, ovar] = model.query_occupancy(hit->point);
            const RevertDerivatives rd =
                revert_derivatives(std::max(omean, kOccupancyFloor), model.kernel());
            img.depth_var(v, u) = rd.first * rd.first * ovar;
        }
    }
    return img;
}

namespace {

struct GradientAccumulators {
    Eigen::VectorXd psi_src;    // sum over samples of (dL/dd * r'(o)) k_s
    Eigen::MatrixXd color_src;  // sum over samples of k_s b_s^T
    PointMatrix direct;         // pairwise sample-point position terms
    double loss = 0.0;
    double pixel_count = 0.0;
};

// Forward render of one view, compositing backprop, and accumulation of the
// shared gradient factors. with_gradient=false computes the loss only.
void accumulate_view(const GpdfModel& model, const ReferenceView& view,
                     const RenderOptimizeOptions& opts, bool with_gradient,
                     GradientAccumulators& acc) {
    const CameraModel& camera = view.camera;
    const double sharp = sharpness_for(model, opts.render);
    const int S = opts.render.n_samples;
    const double dt = (opts.render.t_max - opts.render.t_min) / static_cast<double>(S - 1);
    const Eigen::Index n = model.size();
    const bool use_color = opts.color_weight > 0.0 && view.color_r && view.color_g &&
                           view.color_b && model.feature_table();
    const bool use_depth = opts.depth_weight > 0.0 && view.depth.has_value();
    const Eigen::VectorXd& alpha_occ = model.occupancy_weights();
    const KernelConfig& cfg = model.kernel();

    Eigen::VectorXd occ(S), dist(S), sig(S);
    Eigen::MatrixXd colors = Eigen::MatrixXd::Zero(S, 3);
    Eigen::VectorXd a(S), w(S), dL_dd(S);
    Eigen::MatrixXd dL_dc(S, 3);
    Eigen::VectorXd k_row(n);

    for (int pv = 0; pv < camera.height; ++pv) {
        for (int pu = 0; pu < camera.width; ++pu) {
            const Ray ray = camera.pixel_ray(pu + 0.5, pv + 0.5, opts.render.t_min,
                                             opts.render.t_max);
            for (int i = 0; i < S; ++i) {
                const Vec3 x = ray.at(opts.render.t_min + dt * i);
                double o = 0.0;
                for (Eigen::Index p = 0; p < n; ++p) {
                    k_row(p) =
                        eval_kernel((x.transpose() - model.points().row(p)).norm(), cfg);
                    o += k_row(p) * alpha_occ(p);
                }
                if (use_color)
                    colors.row(i) =
                        (k_row.transpose() * model.feature_weights()).leftCols(3);
                occ(i) = std::max(o, kOccupancyFloor);
                dist(i) = revert(occ(i), cfg);
                sig(i) = sigmoid_s(dist(i), sharp);
            }

            double transmittance = 1.0;
            Eigen::Vector3d chat = Eigen::Vector3d::Zero();
            double dhat = 0.0;
            a.setZero();
            w.setZero();
            for (int i = 0; i + 1 < S; ++i) {
                a(i) = std::clamp((sig(i) - sig(i + 1)) / std::max(sig(i), 1e-300), 0.0,
                                  kAlphaCeil);
                w(i) = transmittance * a(i);
                transmittance *= 1.0 - a(i);
                chat += w(i) * colors.row(i).transpose();
                dhat += w(i) * (opts.render.t_min + dt * i);
            }

            Eigen::Vector3d dL_dC = Eigen::Vector3d::Zero();
            double dL_dD = 0.0;
            if (use_color) {
                const Eigen::Vector3d ref(view.color_r->coeff(pv, pu),
                                          view.color_g->coeff(pv, pu),
                                          view.color_b->coeff(pv, pu));
                const Eigen::Vector3d diff = chat - ref;
                acc.loss += opts.color_weight * diff.squaredNorm();
                dL_dC = 2.0 * opts.color_weight * diff;
            }
            if (use_depth) {
                const double diff = dhat - view.depth->coeff(pv, pu);
                acc.loss += opts.depth_weight * diff * diff;
                dL_dD = 2.0 * opts.depth_weight * diff;
            }
            acc.pixel_count += 1.0;
            if (!with_gradient || (dL_dD == 0.0 && dL_dC.isZero())) continue;

            Eigen::VectorXd dL_dw = Eigen::VectorXd::Zero(S);
            for (int i = 0; i + 1 < S; ++i)
                dL_dw(i) = dL_dC.dot(colors.row(i)) + dL_dD * (opts.render.t_min + dt * i);

            // dL/da_j = T_j g_j - (sum_{i>j} w_i g_i) / (1 - a_j).
            Eigen::VectorXd dL_da = Eigen::VectorXd::Zero(S);
            {
                std::vector<double> t_before(S, 1.0);
                double t_run = 1.0;
                for (int i = 0; i + 1 < S; ++i) {
                    t_before[i] = t_run;
                    t_run *= 1.0 - a(i);
                }
                double suffix = 0.0;
                for (int j = S - 2; j >= 0; --j) {
                    dL_da(j) = t_before[j] * dL_dw(j) - suffix / (1.0 - a(j));
                    suffix += w(j) * dL_dw(j);
                }
            }

            dL_dd.setZero();
            dL_dc.setZero();
            for (int i = 0; i + 1 < S; ++i) {
                if (use_color) dL_dc.row(i) = (w(i) * dL_dC).transpose();
                if (a(i) <= 0.0 || a(i) >= kAlphaCeil) continue;
                const double to_sig_i = dL_da(i) * sig(i + 1) / (sig(i) * sig(i));
                const double to_sig_next = -dL_da(i) / sig(i);
                dL_dd(i) += to_sig_i * sharp * sig(i) * (1.0 - sig(i));
                dL_dd(i + 1) += to_sig_next * sharp * sig(i + 1) * (1.0 - sig(i + 1));
            }

            for (int i = 0; i < S; ++i) {
                const bool want_d = dL_dd(i) != 0.0;
                const bool want_c = use_color && !dL_dc.row(i).isZero();
                if (!want_d && !want_c) continue;
                if (occ(i) < 1e-12) continue;  // negligible compositing influence
                const Vec3 x = ray.at(opts.render.t_min + dt * i);
                const RevertDerivatives rd = revert_derivatives(occ(i), cfg);
                const double a_s = want_d ? dL_dd(i) * rd.first : 0.0;
                const Eigen::Vector3d b_s =
                    want_c ? Eigen::Vector3d(dL_dc.row(i)) : Eigen::Vector3d::Zero();
                for (Eigen::Index p = 0; p < n; ++p) {
                    const Vec3 u_vec = Vec3(model.points().row(p)) - x;
                    const double dpx = std::max(u_vec.norm(), 1e-12 * cfg.length_scale);
                    const double kd = eval_kernel(dpx, cfg);
                    const double kp = kernel_deriv(dpx, cfg);
                    k_row(p) = kd;
                    double coeff = a_s * alpha_occ(p);
                    if (want_c)
                        coeff += b_s.dot(model.feature_weights().row(p).head<3>());
                    acc.direct.row(p) += (coeff * kp / dpx) * u_vec.transpose();
                }
                if (want_d) acc.psi_src += a_s * k_row;
                if (want_c) acc.color_src += k_row * b_s.transpose();
            }
        }
    }
}

double render_loss(const GpdfModel& model, const std::vector<ReferenceView>& views,
                   const RenderOptimizeOptions& opts) {
    GradientAccumulators acc;
    acc.psi_src = Eigen::VectorXd::Zero(model.size());
    acc.color_src = Eigen::MatrixXd::Zero(model.size(), 3);
    acc.direct = PointMatrix::Zero(model.size(), 3);
    for (const ReferenceView& view : views) accumulate_view(model, view, opts, false, acc);
    return acc.loss / std::max(acc.pixel_count, 1.0);
}

}  // namespace

RenderLossGradient render_loss_gradient(const GpdfModel& model,
                                        const std::vector<ReferenceView>& views,
                                        const RenderOptimizeOptions& opts) {
    if (model.noise().mode != NoiseMode::ScalarObservation)
        throw ValidationError("render optimization requires scalar observation noise");
    const Eigen::Index n = model.size();
    const bool has_features = static_cast<bool>(model.feature_table());

    GradientAccumulators acc;
    acc.psi_src = Eigen::VectorXd::Zero(n);
    acc.color_src = Eigen::MatrixXd::Zero(n, 3);
    acc.direct = PointMatrix::Zero(n, 3);
    for (const ReferenceView& view : views) accumulate_view(model, view, opts, true, acc);

    RenderLossGradient out;
    out.loss = acc.loss / std::max(acc.pixel_count, 1.0);
    const double scale = 1.0 / std::max(acc.pixel_count, 1.0);

    // Indirect terms flow through alpha = K^{-1} 1 and W = K^{-1} Y:
    // grad_p -= tr(dM/dX_p (alpha psi^T + W Rt^T)).
    const Eigen::MatrixXd& k_inv = model.system_inverse();
    const Eigen::VectorXd psi = k_inv * acc.psi_src;
    Eigen::MatrixXd u_mat = model.occupancy_weights() * psi.transpose();
    if (has_features) {
        const Eigen::MatrixXd rt = k_inv * acc.color_src;  // n x 3
        out.color_grad = Eigen::MatrixXd::Zero(n, model.feature_table()->cols());
        out.color_grad.leftCols(3) = scale * rt;
        u_mat += model.feature_weights().leftCols(3) * rt.transpose();
    }

    PointMatrix grad = acc.direct;
    const KernelConfig& cfg = model.kernel();
    for (Eigen::Index p = 0; p < n; ++p) {
        Vec3 indirect = Vec3::Zero();
        for (Eigen::Index j = 0; j < n; ++j) {
            if (j == p) continue;
            const Vec3 u_vec = Vec3(model.points().row(p)) - Vec3(model.points().row(j));
            const double d = std::max(u_vec.norm(), 1e-12 * cfg.length_scale);
            indirect += (kernel_deriv(d, cfg) / d) * (u_mat(j, p) + u_mat(p, j)) * u_vec;
        }
        grad.row(p) -= indirect.transpose();
    }
    out.position_grad = scale * grad;
    return out;
}

RenderOptimizeResult optimize_by_rendering(const GpdfModel& model,
                                           const std::vector<ReferenceView>& views,
                                           const RenderOptimizeOptions& opts) {
    if (views.empty()) throw ValidationError("optimize_by_rendering: no reference views");
    RenderOptimizeResult result;
    result.model = model;

    RenderLossGradient eval = render_loss_gradient(result.model, views, opts);
    result.loss_trace.push_back(eval.loss);
    double step = opts.step;

    for (int iter = 0; iter < opts.iterations; ++iter) {
        const bool with_colors = opts.optimize_colors && eval.color_grad.size() > 0;
        const double gnorm2 =
            eval.position_grad.squaredNorm() + (with_colors ? eval.color_grad.squaredNorm() : 0.0);
        if (gnorm2 < 1e-28) break;

        bool accepted = false;
        double trial_step = step;
        for (int bt = 0; bt < opts.max_backtracks && trial_step >= opts.min_step; ++bt) {
            PointCloud trial_cloud;
            trial_cloud.points = result.model.points() - trial_step * eval.position_grad;
            if (result.model.feature_table()) {
                Eigen::MatrixXd f = *result.model.feature_table();
                if (with_colors) f -= trial_step * eval.color_grad;
                trial_cloud.features = std::move(f);
            }
            std::optional<GpdfModel> trial;
            try {
                trial = GpdfModel::fit(trial_cloud, result.model.kernel(), result.model.noise());
            } catch (const std::exception&) {
                trial_step *= 0.5;
                continue;
            }
            const double trial_loss = render_loss(*trial, views, opts);
            if (std::isfinite(trial_loss) && trial_loss <= result.loss_trace.back()) {
                result.model = std::move(*trial);
                result.loss_trace.push_back(trial_loss);
                accepted = true;
                step = trial_step * 1.3;
                break;
            }
            trial_step *= 0.5;
        }
        if (!accepted) break;
        eval = render_loss_gradient(result.model, views, opts);
    }
    return result;
}

}  // namespace gpdf
