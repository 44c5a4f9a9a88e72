#pragma once

#include "gpdf/types.hpp"

#include <Eigen/Core>

#include <string>

namespace gpdf {

enum class KernelKind {
    RationalQuadratic,
    SquaredExponential,
    MaternHalf,       // nu = 1/2, the only kind with a signed reverting output
    MaternThreeHalf,  // nu = 3/2, reverting function solved numerically
};

std::string to_string(KernelKind kind);
KernelKind kernel_kind_from_string(const std::string& name);

struct KernelConfig {
    KernelKind kind = KernelKind::MaternHalf;
    double length_scale = 1.0;
    double alpha = 1.0;  // rational_quadratic only

    void validate() const;
};

/// Occupancy value below which revert() clamps before taking logs; outputs at
/// the clamp should be read as "beyond max range".
inline constexpr double kOccupancyFloor = 1e-300;

/// k(d) for the configured kernel; k(0) = 1, strictly decreasing in d.
double eval_kernel(double distance, const KernelConfig& cfg);

/// dk/dd and d2k/dd2 of the scalar kernel profile.
double kernel_deriv(double distance, const KernelConfig& cfg);
double kernel_second_deriv(double distance, const KernelConfig& cfg);

/// Reverting function r(o) with r(k(d)) = d. MaternHalf maps o > 1 to negative
/// (interior) distances; the other kinds clamp o to (0, 1]. Throws
/// ValidationError for o <= 0.
double revert(double occupancy, const KernelConfig& cfg);

/// r(o), dr/do and d2r/do2 evaluated together (the derivative chain used by
/// the distance gradient and Hessian).
struct RevertDerivatives {
    double distance;
    double first;
    double second;
};
RevertDerivatives revert_derivatives(double occupancy, const KernelConfig& cfg);

/// Spectral density S(s) in ordinary-frequency units (cycles per length).
/// dim is the input dimension D.
double spectral_density(double frequency, const KernelConfig& cfg, int dim);

/// Dense covariance matrix between two point sets with matching column count.
Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& x1, const Eigen::MatrixXd& x2,
                              const KernelConfig& cfg);

/// Covariance row k(x, X) for a single query against a training set.
Eigen::VectorXd kernel_row(const Eigen::RowVectorXd& x, const Eigen::MatrixXd& train,
                           const KernelConfig& cfg);

}  // namespace gpdf
