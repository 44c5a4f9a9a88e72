#pragma once

#include "gpdf/kernels.hpp"
#include "gpdf/types.hpp"

#include <Eigen/Core>

#include <optional>
#include <vector>

namespace gpdf {

class GpdfModel;
GpdfModel add_points(const GpdfModel& model, const PointCloud& extra);
GpdfModel remove_points(const GpdfModel& model, const std::vector<Eigen::Index>& indices);

enum class NoiseMode {
    ScalarObservation,  // D = sigma_y^2 I (optionally per-point sigma_y^2)
    NoisyInput,         // D = diag(grad_o Sigma_x grad_o^T), rebuilt iteratively
};

struct NoiseModel {
    NoiseMode mode = NoiseMode::ScalarObservation;
    double sigma_y2 = 0.0;
    Vec3 sigma_x = Vec3::Zero();  // diagonal input variances, noisy_input mode
    int refit_iterations = 2;

    void validate() const {
        if (sigma_y2 < 0.0) throw ValidationError("observation noise variance must be >= 0");
        if ((sigma_x.array() < 0.0).any()) throw ValidationError("input variances must be >= 0");
        if (refit_iterations < 1) throw ValidationError("refit_iterations must be >= 1");
    }
};

/// Everything a distance query reports. Derivatives and uncertainties are
/// evaluated at the original query point; `distance` includes the ray-march
/// refinement when refine_iters > 0.
struct QueryResult {
    double occupancy_mean = 0.0;
    double occupancy_var = 0.0;
    double distance = 0.0;
    Vec3 gradient = Vec3::Zero();
    Mat3 hessian = Mat3::Zero();
    Vec3 normal = Vec3::Zero();
    double mean_curvature = 0.0;
    double gaussian_curvature = 0.0;
    double latent_uncertainty = 0.0;
    double eikonal_uncertainty = 0.0;
    double fused_uncertainty = 0.0;
    int refine_steps_used = 0;
};

/// A fitted Gaussian process distance field. Immutable once fitted; queries
/// may run concurrently. The explicit inverse of (K + D) is kept because the
/// incremental update path manipulates its blocks directly.
class GpdfModel {
public:
    static constexpr int kDefaultRefineIters = 5;

    /// Empty placeholder; fit() or from_parts() produce usable models.
    GpdfModel() = default;

    /// Fits the occupancy GP (y = 1 at every point). In noisy-input mode the
    /// diagonal D is rebuilt refit_iterations times from the per-point mean
    /// gradients, refactoring each round.
    static GpdfModel fit(const PointCloud& cloud, const KernelConfig& kernel,
                         const NoiseModel& noise);

    Eigen::Index size() const { return x_train_.rows(); }
    const PointMatrix& points() const { return x_train_; }
    const KernelConfig& kernel() const { return kernel_; }
    const NoiseModel& noise() const { return noise_; }
    const Eigen::VectorXd& noise_diagonal() const { return d_diag_; }
    const Eigen::MatrixXd& system_inverse() const { return k_inv_; }
    const Eigen::VectorXd& occupancy_weights() const { return alpha_occ_; }
    const std::optional<Eigen::MatrixXd>& feature_table() const { return features_; }
    /// K^{-1} Y, valid only when a feature table is present.
    const Eigen::MatrixXd& feature_weights() const {
        if (!feature_weights_) throw ValidationError("model has no feature table");
        return *feature_weights_;
    }
    const std::optional<PointMatrix>& input_variance() const { return input_variance_; }
    double jitter() const { return jitter_; }

    /// Posterior occupancy mean and variance (variance clamped at 0).
    std::pair<double, double> query_occupancy(const Vec3& x) const;

    /// Full distance query: reverted distance with ray-march refinement,
    /// analytic derivatives, curvatures, and the three uncertainty proxies.
    QueryResult query_distance(const Vec3& x, int refine_iters = kDefaultRefineIters) const;

    /// Distance only (reverted mean plus optional refinement), no derivatives.
    double distance_only(const Vec3& x, int refine_iters = 0) const;

    Vec3 gradient(const Vec3& x) const;
    Mat3 hessian(const Vec3& x) const;

    /// Mean and Gaussian curvature from the analytic gradient and Hessian.
    std::pair<double, double> curvatures(const Vec3& x) const;

    double latent_uncertainty(const Vec3& x) const;
    double eikonal_uncertainty(const Vec3& x) const;

    /// Posterior mean of every feature column at x (one shared solve).
    Eigen::VectorXd infer_feature_field(const Vec3& x) const;

    /// Sigmoid of the GP mean of a +/-1 label column.
    double classify_binary(const Vec3& x, Eigen::Index label_column = 0) const;

    /// Softmax over the GP means of several per-class label columns.
    Eigen::VectorXd classify_multiclass(const Vec3& x,
                                        const std::vector<Eigen::Index>& class_columns) const;

    /// Gradient of the posterior occupancy variance (explore module contract).
    Vec3 variance_gradient(const Vec3& x) const;

    /// Gradient of the posterior occupancy mean (used to rebuild noisy-input
    /// diagonals incrementally).
    Vec3 occupancy_gradient(const Vec3& x) const { return occupancy_gradient_at(x); }

    /// Rebuilds a model from serialized state without re-running the
    /// noisy-input iteration (d_diag is taken as stored).
    static GpdfModel from_parts(PointMatrix x, KernelConfig kernel, NoiseModel noise,
                                Eigen::VectorXd d_diag, std::optional<Eigen::MatrixXd> features,
                                std::optional<PointMatrix> input_variance);

private:
    friend GpdfModel add_points(const GpdfModel&, const PointCloud&);
    friend GpdfModel remove_points(const GpdfModel&, const std::vector<Eigen::Index>&);

    void factorize();
    void refresh_weights();

    /// k(x, X) and, when requested, per-point gradient rows d k_i / dx.
    void kernel_row_and_grad(const Vec3& x, Eigen::VectorXd& k_row,
                             Eigen::Matrix<double, Eigen::Dynamic, 3>* grad_rows) const;

    Vec3 occupancy_gradient_at(const Vec3& x) const;

    PointMatrix x_train_;
    KernelConfig kernel_;
    NoiseModel noise_;
    Eigen::VectorXd d_diag_;
    Eigen::MatrixXd k_inv_;
    Eigen::VectorXd alpha_occ_;
    std::optional<Eigen::MatrixXd> features_;
    std::optional<Eigen::MatrixXd> feature_weights_;
    std::optional<PointMatrix> input_variance_;
    double jitter_ = 0.0;
};

/// 2x median nearest-neighbour spacing, the default length scale when the
/// caller does not specify one.
double default_length_scale(const PointMatrix& points);

}  // namespace gpdf
