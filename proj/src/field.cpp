#include "gpdf/field.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace gpdf {

namespace {

constexpr double kOnPointTol = 1e-12;
constexpr double kZeroGradTol = 1e-14;

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Sorted-row duplicate scan; only called for zero-noise scalar fits where a
// duplicate makes K exactly singular.
void check_duplicates(const PointMatrix& x) {
    std::vector<Eigen::Index> order(x.rows());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        for (int c = 0; c < 3; ++c) {
            if (x(a, c) != x(b, c)) return x(a, c) < x(b, c);
        }
        return false;
    });
    for (size_t i = 1; i < order.size(); ++i) {
        if (x.row(order[i]) == x.row(order[i - 1])) {
            throw ValidationError(
                "duplicate training points at rows " + std::to_string(order[i - 1]) + " and " +
                std::to_string(order[i]) +
                " with zero observation noise; add noise or enable noisy-input mode");
        }
    }
}

struct DerivativeEval {
    Eigen::VectorXd k_row;                          // at the (possibly offset) point
    Eigen::Matrix<double, Eigen::Dynamic, 3> grad;  // rows dk_i/dx
    double occ = 0.0;
    Vec3 grad_occ = Vec3::Zero();
    Mat3 hess_occ = Mat3::Zero();
};

}  // namespace

double default_length_scale(const PointMatrix& points) {
    const Eigen::Index n = points.rows();
    if (n < 2) return 1.0;
    std::vector<double> nn(n, std::numeric_limits<double>::infinity());
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double d = (points.row(i) - points.row(j)).norm();
            nn[i] = std::min(nn[i], d);
            nn[j] = std::min(nn[j], d);
        }
    }
    std::nth_element(nn.begin(), nn.begin() + n / 2, nn.end());
    return 2.0 * nn[n / 2];
}

GpdfModel GpdfModel::fit(const PointCloud& cloud, const KernelConfig& kernel,
                         const NoiseModel& noise) {
    cloud.validate();
    kernel.validate();
    noise.validate();
    if (cloud.size() < 1) throw ValidationError("fit requires at least one point");

    GpdfModel model;
    model.x_train_ = cloud.points;
    model.kernel_ = kernel;
    model.noise_ = noise;
    model.features_ = cloud.features;
    model.input_variance_ = cloud.input_variance;

    const Eigen::Index n = cloud.size();
    if (noise.mode == NoiseMode::ScalarObservation) {
        if (noise.sigma_y2 == 0.0) check_duplicates(cloud.points);
        model.d_diag_ = Eigen::VectorXd::Constant(n, noise.sigma_y2);
        model.factorize();
        model.refresh_weights();
        return model;
    }

    // Noisy-input mode: start from a small jitter, then rebuild
    // D = diag(grad_i^T Sigma_x grad_i) from the fitted mean gradients.
    model.d_diag_ = Eigen::VectorXd::Constant(n, 1e-8);
    for (int round = 0; round < noise.refit_iterations; ++round) {
        model.factorize();
        model.refresh_weights();
        Eigen::VectorXd new_diag(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const Vec3 g = model.occupancy_gradient_at(model.x_train_.row(i));
            const Vec3 sx = cloud.input_variance ? Vec3(cloud.input_variance->row(i))
                                                 : noise.sigma_x;
            new_diag(i) = std::max(g.cwiseProduct(g).dot(sx), 1e-10);
        }
        model.d_diag_ = new_diag;
    }
    model.factorize();
    model.refresh_weights();
    return model;
}

GpdfModel GpdfModel::from_parts(PointMatrix x, KernelConfig kernel, NoiseModel noise,
                                Eigen::VectorXd d_diag, std::optional<Eigen::MatrixXd> features,
                                std::optional<PointMatrix> input_variance) {
    if (x.rows() < 1) throw ValidationError("model requires at least one point");
    if (d_diag.size() != x.rows()) throw ValidationError("noise diagonal does not match points");
    GpdfModel model;
    model.x_train_ = std::move(x);
    model.kernel_ = kernel;
    model.noise_ = noise;
    model.d_diag_ = std::move(d_diag);
    model.features_ = std::move(features);
    model.input_variance_ = std::move(input_variance);
    model.factorize();
    model.refresh_weights();
    return model;
}

void GpdfModel::factorize() {
    const Eigen::Index n = x_train_.rows();
    Eigen::MatrixXd system = kernel_matrix(x_train_, x_train_, kernel_);
    system.diagonal() += d_diag_;

    double jitter = 0.0;
    for (;;) {
        Eigen::MatrixXd trial = system;
        if (jitter > 0.0) trial.diagonal().array() += jitter;
        Eigen::LLT<Eigen::MatrixXd> llt(trial);
        if (llt.info() == Eigen::Success) {
            k_inv_ = llt.solve(Eigen::MatrixXd::Identity(n, n));
            jitter_ = jitter;
            return;
        }
        jitter = jitter == 0.0 ? 1e-10 : jitter * 10.0;
        if (jitter > 1e-6) {
            throw NumericError("covariance factorization failed for kernel " +
                               to_string(kernel_.kind) + " (l=" + std::to_string(kernel_.length_scale) +
                               ", n=" + std::to_string(n) + ") even with jitter up to 1e-6");
        }
    }
}

void GpdfModel::refresh_weights() {
    alpha_occ_ = k_inv_ * Eigen::VectorXd::Ones(x_train_.rows());
    if (features_) feature_weights_ = k_inv_ * (*features_);
}

void GpdfModel::kernel_row_and_grad(const Vec3& x, Eigen::VectorXd& k_row,
                                    Eigen::Matrix<double, Eigen::Dynamic, 3>* grad_rows) const {
    const Eigen::Index n = x_train_.rows();
    k_row.resize(n);
    Vec3 q = x;
    if (grad_rows != nullptr) {
        // The derivative formulas carry 1/d_i terms; nudge queries that sit
        // exactly on a training point.
        double dmin = std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < n; ++i)
            dmin = std::min(dmin, (q.transpose() - x_train_.row(i)).norm());
        if (dmin < kOnPointTol * kernel_.length_scale)
            q.x() += 1e-9 * kernel_.length_scale;
        grad_rows->resize(n, 3);
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        const Vec3 u = q.transpose() - x_train_.row(i);
        const double d = u.norm();
        k_row(i) = eval_kernel(d, kernel_);
        if (grad_rows != nullptr) {
            const double dd = std::max(d, kOnPointTol * kernel_.length_scale);
            grad_rows->row(i) = (kernel_deriv(dd, kernel_) / dd) * u.transpose();
        }
    }
}

std::pair<double, double> GpdfModel::query_occupancy(const Vec3& x) const {
    Eigen::VectorXd k_row;
    kernel_row_and_grad(x, k_row, nullptr);
    const double mean = k_row.dot(alpha_occ_);
    const double var = 1.0 - k_row.dot(k_inv_ * k_row);
    return {mean, std::max(var, 0.0)};
}

Vec3 GpdfModel::occupancy_gradient_at(const Vec3& x) const {
    Eigen::VectorXd k_row;
    Eigen::Matrix<double, Eigen::Dynamic, 3> grad;
    kernel_row_and_grad(x, k_row, &grad);
    return grad.transpose() * alpha_occ_;
}

namespace {

// One full derivative pass shared by distance, gradient, Hessian, curvature
// and uncertainty evaluation.
DerivativeEval evaluate(const PointMatrix& train, const KernelConfig& cfg, const Vec3& x,
                        const Eigen::VectorXd& alpha) {
    DerivativeEval ev;
    const Eigen::Index n = train.rows();
    ev.k_row.resize(n);
    ev.grad.resize(n, 3);

    Vec3 q = x;
    double dmin = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < n; ++i)
        dmin = std::min(dmin, (q.transpose() - train.row(i)).norm());
    if (dmin < kOnPointTol * cfg.length_scale) q.x() += 1e-9 * cfg.length_scale;

    const Mat3 eye = Mat3::Identity();
    for (Eigen::Index i = 0; i < n; ++i) {
        const Vec3 u = q.transpose() - train.row(i);
        const double d = std::max(u.norm(), kOnPointTol * cfg.length_scale);
        const double k = eval_kernel(d, cfg);
        const double kp = kernel_deriv(d, cfg);
        const double kpp = kernel_second_deriv(d, cfg);
        ev.k_row(i) = k;
        ev.grad.row(i) = (kp / d) * u.transpose();
        const Mat3 uu = u * u.transpose();
        ev.hess_occ += alpha(i) * (kpp * uu / (d * d) + kp * (eye / d - uu / (d * d * d)));
    }
    ev.occ = ev.k_row.dot(alpha);
    ev.grad_occ = ev.grad.transpose() * alpha;
    return ev;
}

struct DistanceDerivatives {
    double distance = 0.0;
    Vec3 grad = Vec3::Zero();
    Mat3 hess = Mat3::Zero();
    double occupancy = 0.0;
};

DistanceDerivatives distance_derivatives(const DerivativeEval& ev, const KernelConfig& cfg) {
    DistanceDerivatives out;
    const RevertDerivatives rd = revert_derivatives(ev.occ, cfg);
    out.distance = rd.distance;
    out.grad = rd.first * ev.grad_occ;
    out.hess = rd.second * (ev.grad_occ * ev.grad_occ.transpose()) + rd.first * ev.hess_occ;
    out.occupancy = ev.occ;
    return out;
}

double prior_gradient_variance(const KernelConfig& cfg) {
    if (cfg.kind == KernelKind::MaternHalf) {
        // The exponential kernel has no second derivative at zero; use the
        // |k'(0)|^2 scale so the Mahalanobis proxy stays finite.
        return 1.0 / (cfg.length_scale * cfg.length_scale);
    }
    return -kernel_second_deriv(0.0, cfg);
}

}  // namespace

double GpdfModel::distance_only(const Vec3& x, int refine_iters) const {
    if (refine_iters <= 0) {
        Eigen::VectorXd k_row;
        kernel_row_and_grad(x, k_row, nullptr);
        return revert(std::max(k_row.dot(alpha_occ_), kOccupancyFloor), kernel_);
    }
    return query_distance(x, refine_iters).distance;
}

QueryResult GpdfModel::query_distance(const Vec3& x, int refine_iters) const {
    QueryResult res;
    DerivativeEval ev = evaluate(x_train_, kernel_, x, alpha_occ_);
    res.occupancy_mean = ev.occ;
    res.occupancy_var = std::max(1.0 - ev.k_row.dot(k_inv_ * ev.k_row), 0.0);

    DistanceDerivatives dd = distance_derivatives(ev, kernel_);
    res.gradient = dd.grad;
    res.hessian = dd.hess;
    const double gnorm = dd.grad.norm();
    if (gnorm > kZeroGradTol) res.normal = dd.grad / gnorm;
    if (gnorm > kZeroGradTol) {
        const double g2 = gnorm * gnorm;
        res.mean_curvature =
            (dd.grad.dot(dd.hess * dd.grad) - g2 * dd.hess.trace()) / (2.0 * g2 * gnorm);
        Eigen::Matrix4d bordered = Eigen::Matrix4d::Zero();
        bordered.topLeftCorner<3, 3>() = dd.hess;
        bordered.topRightCorner<3, 1>() = dd.grad;
        bordered.bottomLeftCorner<1, 3>() = dd.grad.transpose();
        res.gaussian_curvature = -bordered.determinant() / (g2 * g2);
    }
    res.latent_uncertainty = latent_uncertainty(x);
    res.eikonal_uncertainty = std::abs(1.0 - gnorm);

    // Ray-march refinement: walk toward the surface by the current signed
    // distance, accumulating travelled distance and fusing the per-step
    // eikonal deviations harmonically.
    double inv_var_sum = 0.0;
    bool exact_step = false;
    auto fuse = [&](double sigma) {
        if (sigma < 1e-15) {
            exact_step = true;
        } else {
            inv_var_sum += 1.0 / (sigma * sigma);
        }
    };
    fuse(res.eikonal_uncertainty);

    double travelled = 0.0;
    double current = dd.distance;
    Vec3 pos = x;
    Vec3 grad = dd.grad;
    int steps = 0;
    for (int it = 0; it < refine_iters; ++it) {
        const double gn = grad.norm();
        if (gn < kZeroGradTol) break;
        pos -= current * grad / gn;
        travelled += current;
        DerivativeEval step_ev = evaluate(x_train_, kernel_, pos, alpha_occ_);
        DistanceDerivatives step_dd = distance_derivatives(step_ev, kernel_);
        current = step_dd.distance;
        grad = step_dd.grad;
        fuse(std::abs(1.0 - grad.norm()));
        ++steps;
    }
    res.distance = travelled + current;
    res.refine_steps_used = steps;
    res.fused_uncertainty = exact_step || inv_var_sum == 0.0 ? 0.0 : std::sqrt(1.0 / inv_var_sum);
    return res;
}

Vec3 GpdfModel::gradient(const Vec3& x) const {
    DerivativeEval ev = evaluate(x_train_, kernel_, x, alpha_occ_);
    return distance_derivatives(ev, kernel_).grad;
}

Mat3 GpdfModel::hessian(const Vec3& x) const {
    DerivativeEval ev = evaluate(x_train_, kernel_, x, alpha_occ_);
    return distance_derivatives(ev, kernel_).hess;
}

std::pair<double, double> GpdfModel::curvatures(const Vec3& x) const {
    DerivativeEval ev = evaluate(x_train_, kernel_, x, alpha_occ_);
    DistanceDerivatives dd = distance_derivatives(ev, kernel_);
    const double gnorm = dd.grad.norm();
    if (gnorm <= kZeroGradTol)
        throw NumericError("curvature undefined: vanishing distance gradient");
    const double g2 = gnorm * gnorm;
    const double mean =
        (dd.grad.dot(dd.hess * dd.grad) - g2 * dd.hess.trace()) / (2.0 * g2 * gnorm);
    Eigen::Matrix4d bordered = Eigen::Matrix4d::Zero();
    bordered.topLeftCorner<3, 3>() = dd.hess;
    bordered.topRightCorner<3, 1>() = dd.grad;
    bordered.bottomLeftCorner<1, 3>() = dd.grad.transpose();
    const double gauss = -bordered.determinant() / (g2 * g2);
    return {mean, gauss};
}

double GpdfModel::latent_uncertainty(const Vec3& x) const {
    DerivativeEval ev = evaluate(x_train_, kernel_, x, alpha_occ_);
    const RevertDerivatives rd = revert_derivatives(ev.occ, kernel_);
    const double expected = std::abs(kernel_deriv(std::max(rd.distance, 0.0), kernel_));
    const double observed = ev.grad_occ.norm();

    Mat3 sigma = prior_gradient_variance(kernel_) * Mat3::Identity() -
                 ev.grad.transpose() * k_inv_ * ev.grad;
    Vec3 dir = observed > kZeroGradTol ? Vec3(ev.grad_occ / observed)
                                       : Vec3(Vec3::UnitX());
    const double var_along = std::max(dir.dot(sigma * dir), 0.0) + 1e-8;
    return std::abs(expected - observed) / std::sqrt(var_along);
}

double GpdfModel::eikonal_uncertainty(const Vec3& x) const {
    return std::abs(1.0 - gradient(x).norm());
}

Eigen::VectorXd GpdfModel::infer_feature_field(const Vec3& x) const {
    if (!features_) throw ValidationError("model has no feature table");
    Eigen::VectorXd k_row;
    kernel_row_and_grad(x, k_row, nullptr);
    return feature_weights_->transpose() * k_row;
}

double GpdfModel::classify_binary(const Vec3& x, Eigen::Index label_column) const {
    if (!features_) throw ValidationError("model has no label column");
    if (label_column < 0 || label_column >= features_->cols())
        throw ValidationError("label column out of range");
    Eigen::VectorXd k_row;
    kernel_row_and_grad(x, k_row, nullptr);
    return sigmoid(k_row.dot(feature_weights_->col(label_column)));
}

Eigen::VectorXd GpdfModel::classify_multiclass(
    const Vec3& x, const std::vector<Eigen::Index>& class_columns) const {
    if (!features_) throw ValidationError("model has no label columns");
    Eigen::VectorXd k_row;
    kernel_row_and_grad(x, k_row, nullptr);
    Eigen::VectorXd scores(static_cast<Eigen::Index>(class_columns.size()));
    for (size_t c = 0; c < class_columns.size(); ++c) {
        if (class_columns[c] < 0 || class_columns[c] >= features_->cols())
            throw ValidationError("label column out of range");
        scores(static_cast<Eigen::Index>(c)) = k_row.dot(feature_weights_->col(class_columns[c]));
    }
    const double mx = scores.maxCoeff();
    Eigen::VectorXd soft = (scores.array() - mx).exp();
    return soft / soft.sum();
}

Vec3 GpdfModel::variance_gradient(const Vec3& x) const {
    Eigen::VectorXd k_row;
    Eigen::Matrix<double, Eigen::Dynamic, 3> grad;
    kernel_row_and_grad(x, k_row, &grad);
    return -2.0 * grad.transpose() * (k_inv_ * k_row);
}

}  // namespace gpdf
