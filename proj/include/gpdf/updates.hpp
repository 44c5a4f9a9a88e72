#pragma once

#include "gpdf/field.hpp"

#include <vector>

namespace gpdf {

/// Appends observations to a fitted model by extending the stored inverse with
/// block-matrix identities; only the new block's Schur complement is inverted.
/// Predictions match a from-scratch refit on the union.
GpdfModel add_points(const GpdfModel& model, const PointCloud& extra);

/// Removes the given training rows, collapsing the stored inverse onto the
/// retained block. At least one point must remain.
GpdfModel remove_points(const GpdfModel& model, const std::vector<Eigen::Index>& indices);

struct InducingResult {
    PointMatrix points;                   // m x 3
    std::vector<double> objective_trace;  // objective after each accepted step
};

struct InducingOptions {
    int iterations = 30;
    double step = 0.05;          // initial gradient-ascent step, in length units
    double fd_step = 1e-4;       // central-difference step for position gradients
    int max_backtracks = 12;
};

/// KL-surrogate objective for an inducing set: the collapsed low-rank log
/// marginal likelihood minus the trace penalty, evaluated in factorized form.
double inducing_objective(const PointMatrix& x_full, const Eigen::VectorXd& y,
                          const PointMatrix& inducing, const KernelConfig& kernel,
                          double sigma_y2);

/// Gradient-ascent refinement of m inducing positions starting from the voxel
/// means of the full cloud. Accepted steps never decrease the objective;
/// points stay inside the data bounding box expanded by two length scales.
InducingResult optimize_inducing(const PointMatrix& x_full, const Eigen::VectorXd& y,
                                 Eigen::Index m, const KernelConfig& kernel, double sigma_y2,
                                 const InducingOptions& opts = {});

}  // namespace gpdf
