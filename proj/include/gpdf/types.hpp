#pragma once

#include <Eigen/Core>

#include <optional>
#include <stdexcept>
#include <string>

namespace gpdf {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using PointMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3>;

/// Thrown when inputs or configuration fail validation (CLI exit code 2).
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Thrown when a numeric procedure fails, e.g. a factorization that cannot be
/// rescued by jitter or a solver that does not converge (CLI exit code 3).
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Thrown on file/format problems (CLI exit code 4).
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Thrown by boundary-limited approximations (SKI lattice, Hilbert box) when a
/// point falls outside their domain.
class OutOfDomainError : public ValidationError {
public:
    explicit OutOfDomainError(const std::string& msg) : ValidationError(msg) {}
};

/// Observation points with optional per-point weights, diagonal input
/// covariances (length^2 units, one row per point) and feature rows
/// (RGB in [0,1], labels, or generic embeddings).
struct PointCloud {
    PointMatrix points;                          // n x 3
    std::optional<Eigen::VectorXd> weights;      // n
    std::optional<PointMatrix> input_variance;   // n x 3, diagonal Sigma_x rows
    std::optional<Eigen::MatrixXd> features;     // n x F

    Eigen::Index size() const { return points.rows(); }

    void validate() const {
        if (!points.allFinite()) throw ValidationError("point cloud contains non-finite coordinates");
        if (weights && weights->size() != points.rows())
            throw ValidationError("weight count does not match point count");
        if (weights && (weights->array() <= 0.0).any())
            throw ValidationError("point weights must be positive");
        if (input_variance && input_variance->rows() != points.rows())
            throw ValidationError("input variance rows do not match point count");
        if (input_variance && (input_variance->array() < 0.0).any())
            throw ValidationError("input variances must be non-negative");
        if (features && features->rows() != points.rows())
            throw ValidationError("feature rows do not match point count");
    }
};

}  // namespace gpdf
