#include "gpdf/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace gpdf {

namespace {

constexpr double kSqrt3 = 1.7320508075688772;

double matern_three_half_eval(double d, double l) {
    const double a = kSqrt3 * d / l;
    return (1.0 + a) * std::exp(-a);
}

// Bracketed bisection on k(d) - o over [0, 50 l]. k is strictly decreasing so
// the root is unique; 200 halvings put the bracket far below 1e-10.
double matern_three_half_revert(double o, double l) {
    if (o >= 1.0) return 0.0;
    double lo = 0.0;
    double hi = 50.0 * l;
    if (o <= matern_three_half_eval(hi, l)) return hi;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (matern_three_half_eval(mid, l) > o)
            lo = mid;
        else
            hi = mid;
        if (hi - lo < 1e-14 * l) break;
    }
    return 0.5 * (lo + hi);
}

}  // namespace

std::string to_string(KernelKind kind) {
    switch (kind) {
        case KernelKind::RationalQuadratic: return "rational_quadratic";
        case KernelKind::SquaredExponential: return "squared_exponential";
        case KernelKind::MaternHalf: return "matern_half";
        case KernelKind::MaternThreeHalf: return "matern_three_half";
    }
    return "unknown";
}

KernelKind kernel_kind_from_string(const std::string& name) {
    if (name == "rational_quadratic") return KernelKind::RationalQuadratic;
    if (name == "squared_exponential") return KernelKind::SquaredExponential;
    if (name == "matern_half") return KernelKind::MaternHalf;
    if (name == "matern_three_half") return KernelKind::MaternThreeHalf;
    throw ValidationError("unknown kernel kind: " + name);
}

void KernelConfig::validate() const {
    if (!(length_scale > 0.0))
        throw ValidationError("kernel length scale must be positive");
    if (kind == KernelKind::RationalQuadratic && !(alpha > 0.0))
        throw ValidationError("rational_quadratic alpha must be positive");
}

double eval_kernel(double d, const KernelConfig& cfg) {
    cfg.validate();
    if (d < 0.0) throw ValidationError("kernel distance must be non-negative");
    const double l = cfg.length_scale;
    switch (cfg.kind) {
        case KernelKind::RationalQuadratic:
            return std::pow(1.0 + d * d / (2.0 * cfg.alpha * l * l), -cfg.alpha);
        case KernelKind::SquaredExponential:
            return std::exp(-d * d / (2.0 * l * l));
        case KernelKind::MaternHalf:
            return std::exp(-d / l);
        case KernelKind::MaternThreeHalf:
            return matern_three_half_eval(d, l);
    }
    return 0.0;
}

double kernel_deriv(double d, const KernelConfig& cfg) {
    const double l = cfg.length_scale;
    switch (cfg.kind) {
        case KernelKind::RationalQuadratic: {
            const double g = 1.0 + d * d / (2.0 * cfg.alpha * l * l);
            return -(d / (l * l)) * std::pow(g, -cfg.alpha - 1.0);
        }
        case KernelKind::SquaredExponential:
            return -(d / (l * l)) * std::exp(-d * d / (2.0 * l * l));
        case KernelKind::MaternHalf:
            return -std::exp(-d / l) / l;
        case KernelKind::MaternThreeHalf:
            return -(3.0 * d / (l * l)) * std::exp(-kSqrt3 * d / l);
    }
    return 0.0;
}

double kernel_second_deriv(double d, const KernelConfig& cfg) {
    const double l = cfg.length_scale;
    switch (cfg.kind) {
        case KernelKind::RationalQuadratic: {
            const double al2 = cfg.alpha * l * l;
            const double g = 1.0 + d * d / (2.0 * al2);
            return -std::pow(g, -cfg.alpha - 1.0) / (l * l) +
                   d * d * (cfg.alpha + 1.0) / (cfg.alpha * l * l * l * l) *
                       std::pow(g, -cfg.alpha - 2.0);
        }
        case KernelKind::SquaredExponential: {
            const double e = std::exp(-d * d / (2.0 * l * l));
            return e * (d * d / (l * l * l * l) - 1.0 / (l * l));
        }
        case KernelKind::MaternHalf:
            return std::exp(-d / l) / (l * l);
        case KernelKind::MaternThreeHalf: {
            const double e = std::exp(-kSqrt3 * d / l);
            return e * (3.0 * kSqrt3 * d / (l * l * l) - 3.0 / (l * l));
        }
    }
    return 0.0;
}

double revert(double o, const KernelConfig& cfg) {
    cfg.validate();
    if (!(o > 0.0)) throw ValidationError("reverting function requires occupancy > 0");
    const double l = cfg.length_scale;
    const double oc = std::max(o, kOccupancyFloor);
    switch (cfg.kind) {
        case KernelKind::RationalQuadratic: {
            if (oc >= 1.0) return 0.0;
            return std::sqrt(2.0 * cfg.alpha * l * l * (std::pow(oc, -1.0 / cfg.alpha) - 1.0));
        }
        case KernelKind::SquaredExponential: {
            if (oc >= 1.0) return 0.0;
            return std::sqrt(-2.0 * l * l * std::log(oc));
        }
        case KernelKind::MaternHalf:
            return -l * std::log(oc);
        case KernelKind::MaternThreeHalf:
            return matern_three_half_revert(oc, l);
    }
    return 0.0;
}

RevertDerivatives revert_derivatives(double o, const KernelConfig& cfg) {
    const double oc = std::max(o, kOccupancyFloor);
    RevertDerivatives out{};
    out.distance = revert(oc, cfg);
    if (cfg.kind == KernelKind::MaternHalf) {
        const double l = cfg.length_scale;
        out.first = -l / oc;
        out.second = l / (oc * oc);
        return out;
    }
    // Implicit function identities at d = r(o): r'(o) = 1/k'(d) and
    // r''(o) = -k''(d)/k'(d)^3.
    const double kp = kernel_deriv(out.distance, cfg);
    if (kp == 0.0) throw NumericError("reverting derivative is singular at d = 0 for " + to_string(cfg.kind));
    const double kpp = kernel_second_deriv(out.distance, cfg);
    out.first = 1.0 / kp;
    out.second = -kpp / (kp * kp * kp);
    return out;
}

double spectral_density(double s, const KernelConfig& cfg, int dim) {
    cfg.validate();
    if (s < 0.0) throw ValidationError("frequency must be non-negative");
    if (dim < 1) throw ValidationError("dimension must be >= 1");
    const double l = cfg.length_scale;
    const double D = static_cast<double>(dim);
    constexpr double pi = std::numbers::pi;
    switch (cfg.kind) {
        case KernelKind::RationalQuadratic: {
            const double nu = cfg.alpha - 0.5 * D;
            const double denom = std::pow(2.0, cfg.alpha - 1.0) * std::tgamma(cfg.alpha);
            if (s == 0.0) {
                // Limit of s^nu K_nu(s) as s -> 0 is 2^(nu-1) Gamma(nu) for nu > 0.
                if (nu <= 0.0) return std::numeric_limits<double>::infinity();
                return l * std::pow(2.0, nu - 1.0) * std::tgamma(nu) / denom;
            }
            return l * std::pow(s, nu) * std::cyl_bessel_k(std::abs(nu), s) / denom;
        }
        case KernelKind::SquaredExponential:
            return std::pow(2.0 * pi * l * l, 0.5 * D) * std::exp(-2.0 * pi * pi * l * l * s * s);
        case KernelKind::MaternHalf:
        case KernelKind::MaternThreeHalf: {
            const double nu = cfg.kind == KernelKind::MaternHalf ? 0.5 : 1.5;
            const double num = std::pow(2.0, D) * std::pow(pi, 0.5 * D) *
                               std::tgamma(nu + 0.5 * D) * std::pow(2.0 * nu, nu);
            const double den = std::tgamma(nu) * std::pow(l, 2.0 * nu);
            return num / den *
                   std::pow(2.0 * nu / (l * l) + 4.0 * pi * pi * s * s, -(nu + 0.5 * D));
        }
    }
    return 0.0;
}

Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& x1, const Eigen::MatrixXd& x2,
                              const KernelConfig& cfg) {
    cfg.validate();
    if (x1.cols() != x2.cols())
        throw ValidationError("kernel_matrix: dimension mismatch between point sets");
    Eigen::MatrixXd out(x1.rows(), x2.rows());
    for (Eigen::Index j = 0; j < x2.rows(); ++j) {
        for (Eigen::Index i = 0; i < x1.rows(); ++i) {
            out(i, j) = eval_kernel((x1.row(i) - x2.row(j)).norm(), cfg);
        }
    }
    return out;
}

Eigen::VectorXd kernel_row(const Eigen::RowVectorXd& x, const Eigen::MatrixXd& train,
                           const KernelConfig& cfg) {
    Eigen::VectorXd out(train.rows());
    for (Eigen::Index i = 0; i < train.rows(); ++i)
        out(i) = eval_kernel((x - train.row(i)).norm(), cfg);
    return out;
}

}  // namespace gpdf
