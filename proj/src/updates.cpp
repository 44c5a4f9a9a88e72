#include "gpdf/updates.hpp"

#include "gpdf/downsample.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <set>

namespace gpdf {

namespace {

Eigen::MatrixXd vstack(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    Eigen::MatrixXd out(a.rows() + b.rows(), a.cols());
    out.topRows(a.rows()) = a;
    out.bottomRows(b.rows()) = b;
    return out;
}

}  // namespace

GpdfModel add_points(const GpdfModel& model, const PointCloud& extra) {
    extra.validate();
    const Eigen::Index n1 = model.size();
    const Eigen::Index n2 = extra.size();
    if (n2 == 0) return model;
    if (static_cast<bool>(model.feature_table()) != static_cast<bool>(extra.features))
        throw ValidationError("added points must match the model's feature layout");
    if (model.feature_table() && model.feature_table()->cols() != extra.features->cols())
        throw ValidationError("added feature width does not match the model");

    const KernelConfig& cfg = model.kernel();
    const Eigen::MatrixXd k12 = kernel_matrix(model.points(), extra.points, cfg);
    Eigen::MatrixXd k22 = kernel_matrix(extra.points, extra.points, cfg);

    // New-block noise diagonal. In noisy-input mode the mean gradients of the
    // current model stand in for a full refit round.
    Eigen::VectorXd d2(n2);
    if (model.noise().mode == NoiseMode::ScalarObservation) {
        d2.setConstant(model.noise().sigma_y2);
    } else {
        for (Eigen::Index i = 0; i < n2; ++i) {
            const Vec3 sx = extra.input_variance ? Vec3(extra.input_variance->row(i))
                                                 : model.noise().sigma_x;
            const Vec3 g = model.occupancy_gradient(extra.points.row(i));
            d2(i) = std::max(g.cwiseProduct(g).dot(sx), 1e-10);
        }
    }
    k22.diagonal() += d2;
    k22.diagonal().array() += model.jitter();

    const Eigen::MatrixXd& j11_old = model.system_inverse();
    const Eigen::MatrixXd w = j11_old * k12;                  // n1 x n2
    Eigen::MatrixXd schur = k22 - k12.transpose() * w;        // n2 x n2
    schur = 0.5 * (schur + schur.transpose().eval());
    Eigen::LLT<Eigen::MatrixXd> llt(schur);
    if (llt.info() != Eigen::Success)
        throw NumericError("incremental add: new block is singular (duplicate points at zero noise?)");
    const Eigen::MatrixXd j22 = llt.solve(Eigen::MatrixXd::Identity(n2, n2));

    Eigen::MatrixXd inv(n1 + n2, n1 + n2);
    inv.topLeftCorner(n1, n1) = j11_old + w * j22 * w.transpose();
    inv.topRightCorner(n1, n2) = -w * j22;
    inv.bottomLeftCorner(n2, n1) = inv.topRightCorner(n1, n2).transpose();
    inv.bottomRightCorner(n2, n2) = j22;
    inv = 0.5 * (inv + inv.transpose().eval());

    GpdfModel out;
    out.x_train_ = vstack(model.points(), extra.points);
    out.kernel_ = cfg;
    out.noise_ = model.noise();
    out.d_diag_.resize(n1 + n2);
    out.d_diag_.head(n1) = model.noise_diagonal();
    out.d_diag_.tail(n2) = d2;
    out.k_inv_ = std::move(inv);
    out.jitter_ = model.jitter();
    if (model.feature_table())
        out.features_ = vstack(*model.feature_table(), *extra.features);
    if (model.input_variance() || extra.input_variance) {
        PointMatrix iv1 = model.input_variance()
                              ? *model.input_variance()
                              : PointMatrix(PointMatrix::Zero(n1, 3));
        PointMatrix iv2 = extra.input_variance ? *extra.input_variance
                                               : PointMatrix(PointMatrix::Zero(n2, 3));
        out.input_variance_ = vstack(iv1, iv2);
    }
    out.refresh_weights();
    return out;
}

GpdfModel remove_points(const GpdfModel& model, const std::vector<Eigen::Index>& indices) {
    if (indices.empty()) return model;
    const Eigen::Index n = model.size();
    std::set<Eigen::Index> drop(indices.begin(), indices.end());
    for (Eigen::Index idx : drop) {
        if (idx < 0 || idx >= n) throw ValidationError("remove_points: index out of range");
    }
    const Eigen::Index n2 = static_cast<Eigen::Index>(drop.size());
    const Eigen::Index n1 = n - n2;
    if (n1 < 1) throw ValidationError("remove_points: at least one point must remain");

    std::vector<Eigen::Index> keep;
    keep.reserve(n1);
    for (Eigen::Index i = 0; i < n; ++i)
        if (!drop.count(i)) keep.push_back(i);
    std::vector<Eigen::Index> gone(drop.begin(), drop.end());

    // Permute the stored inverse so the retained block leads, then collapse
    // with the Schur complement of the deleted block.
    const Eigen::MatrixXd& j = model.system_inverse();
    Eigen::MatrixXd j11(n1, n1), j12(n1, n2), j22(n2, n2);
    for (Eigen::Index a = 0; a < n1; ++a) {
        for (Eigen::Index b = 0; b < n1; ++b) j11(a, b) = j(keep[a], keep[b]);
        for (Eigen::Index b = 0; b < n2; ++b) j12(a, b) = j(keep[a], gone[b]);
    }
    for (Eigen::Index a = 0; a < n2; ++a)
        for (Eigen::Index b = 0; b < n2; ++b) j22(a, b) = j(gone[a], gone[b]);

    Eigen::LLT<Eigen::MatrixXd> llt(j22);
    if (llt.info() != Eigen::Success)
        throw NumericError("remove_points: deleted block of the inverse is singular");
    Eigen::MatrixXd inv = j11 - j12 * llt.solve(j12.transpose());
    inv = 0.5 * (inv + inv.transpose().eval());

    GpdfModel out;
    out.x_train_.resize(n1, 3);
    out.d_diag_.resize(n1);
    for (Eigen::Index a = 0; a < n1; ++a) {
        out.x_train_.row(a) = model.points().row(keep[a]);
        out.d_diag_(a) = model.noise_diagonal()(keep[a]);
    }
    out.kernel_ = model.kernel();
    out.noise_ = model.noise();
    out.k_inv_ = std::move(inv);
    out.jitter_ = model.jitter();
    if (model.feature_table()) {
        Eigen::MatrixXd f(n1, model.feature_table()->cols());
        for (Eigen::Index a = 0; a < n1; ++a) f.row(a) = model.feature_table()->row(keep[a]);
        out.features_ = std::move(f);
    }
    if (model.input_variance()) {
        PointMatrix iv(n1, 3);
        for (Eigen::Index a = 0; a < n1; ++a) iv.row(a) = model.input_variance()->row(keep[a]);
        out.input_variance_ = std::move(iv);
    }
    out.refresh_weights();
    return out;
}

double inducing_objective(const PointMatrix& x_full, const Eigen::VectorXd& y,
                          const PointMatrix& inducing, const KernelConfig& kernel,
                          double sigma_y2) {
    if (!(sigma_y2 > 0.0))
        throw ValidationError("inducing objective requires sigma_y2 > 0");
    const Eigen::Index n = x_full.rows();
    const Eigen::Index m = inducing.rows();

    Eigen::MatrixXd kmm = kernel_matrix(inducing, inducing, kernel);
    kmm.diagonal().array() += 1e-10;
    Eigen::LLT<Eigen::MatrixXd> lm(kmm);
    if (lm.info() != Eigen::Success)
        throw NumericError("inducing objective: K_mm factorization failed");

    // V = L_m^{-1} K_mn, so Q = V^T V and the collapsed covariance
    // sigma^2 I + Q factors through the m x m matrix G below.
    Eigen::MatrixXd kmn = kernel_matrix(inducing, x_full, kernel);
    Eigen::MatrixXd v = lm.matrixL().solve(kmn);
    Eigen::MatrixXd g = sigma_y2 * Eigen::MatrixXd::Identity(m, m) + v * v.transpose();
    Eigen::LLT<Eigen::MatrixXd> lg(g);
    if (lg.info() != Eigen::Success)
        throw NumericError("inducing objective: collapsed system factorization failed");

    const Eigen::VectorXd vy = v * y;
    const Eigen::VectorXd u = lg.matrixL().solve(vy);
    const double quad = (y.squaredNorm() - u.squaredNorm()) / sigma_y2;

    double logdet = static_cast<double>(n - m) * std::log(sigma_y2);
    for (Eigen::Index i = 0; i < m; ++i) logdet += 2.0 * std::log(lg.matrixL()(i, i));

    const double trace_penalty =
        (static_cast<double>(n) * eval_kernel(0.0, kernel) - v.squaredNorm()) / (2.0 * sigma_y2);

    constexpr double kLog2Pi = 1.8378770664093456;
    const double log_lik = -0.5 * (static_cast<double>(n) * kLog2Pi + logdet + quad);
    return log_lik - trace_penalty;
}

InducingResult optimize_inducing(const PointMatrix& x_full, const Eigen::VectorXd& y,
                                 Eigen::Index m, const KernelConfig& kernel, double sigma_y2,
                                 const InducingOptions& opts) {
    const Eigen::Index n = x_full.rows();
    if (m < 1 || m > n) throw ValidationError("inducing count must satisfy 1 <= m <= n");
    if (y.size() != n) throw ValidationError("label vector does not match point count");

    // Seed from voxel means: shrink the voxel until enough cells appear, then
    // take the m fullest cells.
    PointMatrix init;
    {
        const Vec3 lo = x_full.colwise().minCoeff();
        const Vec3 hi = x_full.colwise().maxCoeff();
        double cell = (hi - lo).maxCoeff() / std::max<double>(2.0, std::cbrt(double(m)));
        for (int attempt = 0; attempt < 24; ++attempt) {
            VoxelGrid grid(cell, lo);
            grid.accumulate(x_full);
            const PointCloud means = grid.emit_samples(DownsampleMode::MeanOnly);
            if (means.size() >= m) {
                init = means.points.topRows(m);
                break;
            }
            cell *= 0.7;
        }
        if (init.rows() != m) {
            init = x_full.topRows(m);  // degenerate spread; fall back to a subsample
        }
    }

    const Vec3 box_lo = x_full.colwise().minCoeff().array() - 2.0 * kernel.length_scale;
    const Vec3 box_hi = x_full.colwise().maxCoeff().array() + 2.0 * kernel.length_scale;

    PointMatrix current = init;
    double best = inducing_objective(x_full, y, current, kernel, sigma_y2);
    InducingResult result;
    result.objective_trace.push_back(best);

    double step = opts.step;
    for (int iter = 0; iter < opts.iterations; ++iter) {
        // Central differences over every inducing coordinate; O(n m^2) per
        // objective evaluation keeps this desk-scale only.
        PointMatrix grad(m, 3);
        for (Eigen::Index i = 0; i < m; ++i) {
            for (int c = 0; c < 3; ++c) {
                PointMatrix probe = current;
                probe(i, c) += opts.fd_step;
                const double hiv = inducing_objective(x_full, y, probe, kernel, sigma_y2);
                probe(i, c) = current(i, c) - opts.fd_step;
                const double lov = inducing_objective(x_full, y, probe, kernel, sigma_y2);
                grad(i, c) = (hiv - lov) / (2.0 * opts.fd_step);
            }
        }
        const double gnorm = grad.norm();
        if (gnorm < 1e-12) break;

        bool accepted = false;
        double trial_step = step;
        for (int bt = 0; bt < opts.max_backtracks; ++bt) {
            PointMatrix trial = current + trial_step / gnorm * grad;
            for (Eigen::Index i = 0; i < m; ++i)
                for (int c = 0; c < 3; ++c)
                    trial(i, c) = std::clamp(trial(i, c), box_lo(c), box_hi(c));
            const double value = inducing_objective(x_full, y, trial, kernel, sigma_y2);
            if (std::isfinite(value) && value >= best) {
                current = trial;
                best = value;
                result.objective_trace.push_back(best);
                accepted = true;
                step = trial_step * 1.5;
                break;
            }
            trial_step *= 0.5;
        }
        if (!accepted) break;
    }

    result.points = current;
    return result;
}

}  // namespace gpdf
