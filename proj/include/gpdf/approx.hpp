#pragma once

#include "gpdf/kernels.hpp"
#include "gpdf/types.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <memory>
#include <string>
#include <vector>

namespace gpdf {

enum class ApproxMethod { Ski, Hilbert, Nystrom };

std::string to_string(ApproxMethod method);
ApproxMethod approx_method_from_string(const std::string& name);

/// Axis-aligned lattice for SKI: per-axis bounds and node counts.
struct LatticeSpec {
    Eigen::VectorXd lo;
    Eigen::VectorXd hi;
    Eigen::VectorXi nodes;

    int dim() const { return static_cast<int>(lo.size()); }
    Eigen::Index total_nodes() const;
    double step(int axis) const { return (hi(axis) - lo(axis)) / (nodes(axis) - 1); }
    Eigen::VectorXd node_point(Eigen::Index linear) const;
    void validate() const;
};

/// The shared low-rank structure K(X1,X2) ~ A_X1 B A_X2^T. Feature rows and
/// their spatial derivatives are method-specific; inference on top of them is
/// one Woodbury path.
class LowRankFactors {
public:
    ApproxMethod method() const { return method_; }
    const KernelConfig& kernel() const { return kernel_; }
    int dim() const { return dim_; }
    Eigen::Index rank() const { return m_; }

    /// Dense feature row A_x (length m). Throws OutOfDomainError for SKI and
    /// Hilbert when x leaves their domain.
    Eigen::VectorXd feature_row(const Eigen::RowVectorXd& x) const;

    /// Feature row and its spatial derivative (m x dim).
    void feature_row_and_grad(const Eigen::RowVectorXd& x, Eigen::VectorXd& row,
                              Eigen::MatrixXd& grad) const;

    /// Sparse SKI row: corner indices and interpolation weights (<= 2^dim
    /// entries summing to 1).
    void sparse_row(const Eigen::RowVectorXd& x, std::vector<Eigen::Index>& idx,
                    std::vector<double>& w) const;

    /// Approximated kernel value A_x B A_x'^T.
    double kernel_approx(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) const;

    /// Applies B and B^{-1} to feature-space vectors.
    Eigen::VectorXd apply_b(const Eigen::VectorXd& v) const;
    Eigen::MatrixXd b_inverse() const;

    const Eigen::MatrixXd& reference_points() const { return refs_; }
    const LatticeSpec& lattice() const { return lattice_; }

private:
    friend LowRankFactors ski_factors(const LatticeSpec&, const KernelConfig&);
    friend LowRankFactors hilbert_factors(const Eigen::VectorXd&, const Eigen::VectorXd&,
                                          const Eigen::VectorXi&, const KernelConfig&,
                                          Eigen::Index);
    friend LowRankFactors nystrom_factors(const Eigen::MatrixXd&, Eigen::Index,
                                          const KernelConfig&);

    ApproxMethod method_ = ApproxMethod::Nystrom;
    KernelConfig kernel_;
    int dim_ = 0;
    Eigen::Index m_ = 0;

    LatticeSpec lattice_;        // SKI
    Eigen::MatrixXd b_;          // SKI: K(U,U)
    Eigen::MatrixXd b_inv_;      // SKI: K(U,U)^{-1}, factorized once per grid

    Eigen::VectorXd box_center_;  // Hilbert
    Eigen::VectorXd box_half_;    // Hilbert box half-widths L
    Eigen::MatrixXi mode_index_;  // Hilbert: m x dim mode multi-indices
    Eigen::VectorXd b_diag_;      // Hilbert: spectral weights; Nystrom: 1/lambda

    Eigen::MatrixXd refs_;  // Nystrom reference points
    Eigen::MatrixXd phi_;   // Nystrom: top-rank eigenvectors of K(refs,refs)
};

/// B = K(U,U) over the lattice; feature rows are multilinear interpolation
/// weights. Queries must stay inside the lattice.
LowRankFactors ski_factors(const LatticeSpec& lattice, const KernelConfig& cfg);

/// Laplacian eigenfunctions on the centered box with half-widths `half`,
/// weighted by the kernel's spectral density. `modes_per_axis` sine modes per
/// axis, tensorized, sorted by total frequency, truncated to `max_modes`
/// (0 keeps all).
LowRankFactors hilbert_factors(const Eigen::VectorXd& center, const Eigen::VectorXd& half,
                               const Eigen::VectorXi& modes_per_axis, const KernelConfig& cfg,
                               Eigen::Index max_modes = 0);

/// Top-`rank` eigenpairs of K(refs,refs); valid for queries anywhere.
LowRankFactors nystrom_factors(const Eigen::MatrixXd& refs, Eigen::Index rank,
                               const KernelConfig& cfg);

/// Woodbury-form approximate GP over the factor structure. Observation noise
/// must be strictly positive (D^{-1} appears explicitly).
class ApproxModel {
public:
    const LowRankFactors& factors() const { return *factors_; }
    Eigen::Index size() const { return n_; }
    double sigma_y2() const { return sigma_y2_; }

    std::pair<double, double> query(const Eigen::RowVectorXd& x) const;
    double mean(const Eigen::RowVectorXd& x) const;

    /// Gradient of the posterior mean.
    Eigen::VectorXd mean_gradient(const Eigen::RowVectorXd& x) const;

    /// Reverted distance with optional ray-march refinement through the
    /// approximate gradient.
    double distance(const Eigen::RowVectorXd& x, int refine_iters = 0) const;

    /// Incremental accumulator updates; one rank-sized refactorization per
    /// call.
    void add_points(const Eigen::MatrixXd& x, const Eigen::VectorXd& y);
    void remove_points(const std::vector<Eigen::Index>& indices);

    const Eigen::MatrixXd& information() const { return p_; }
    const Eigen::VectorXd& information_vector() const { return q_; }

    friend ApproxModel approx_fit(const Eigen::MatrixXd&, const Eigen::VectorXd&,
                                  std::shared_ptr<const LowRankFactors>, double);

private:
    void resolve();

    std::shared_ptr<const LowRankFactors> factors_;
    double sigma_y2_ = 0.0;
    Eigen::Index n_ = 0;
    Eigen::MatrixXd p_;            // A^T D^{-1} A
    Eigen::VectorXd q_;            // A^T D^{-1} y
    Eigen::LLT<Eigen::MatrixXd> solve_;  // factor of B^{-1} + P
    Eigen::VectorXd w_;            // (B^{-1} + P)^{-1} q
    Eigen::MatrixXd stored_rows_;  // per-point feature rows, for deletion
    Eigen::VectorXd stored_y_;
};

ApproxModel approx_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                       std::shared_ptr<const LowRankFactors> factors, double sigma_y2);

/// One row of the kernel-approximation comparison report.
struct BenchRow {
    std::string method;
    Eigen::Index n = 0;
    Eigen::Index m = 0;
    double build_ms = 0.0;
    double fit_ms = 0.0;
    double query_ms_single = 0.0;
    double query_ms_batch = 0.0;
    double rms_distance_error_inside = 0.0;
    double rms_distance_error_outside = 0.0;
};

struct BenchConfig {
    std::vector<ApproxMethod> methods{ApproxMethod::Ski, ApproxMethod::Hilbert,
                                      ApproxMethod::Nystrom};
    std::vector<Eigen::Index> n_sweep{1000, 2000, 4000};
    int dim = 2;
    double box_half_width = 5.0;  // protocol box [-5, 5]
    int grid_nodes = 41;          // per axis
    double radius = 1.0;          // sphere/circle fixture radius
    double inside_radius = 2.0;   // interior accuracy shell
    double outside_radius = 7.0;  // beyond the approximation boxes
    double length_scale = 0.5;
    double sigma_y2 = 1e-4;
    Eigen::Index nystrom_rank = 0;  // 0: full reference rank
    int refine_iters = 5;
    int batch_queries = 500;
    unsigned seed = 7;
};

/// Runs the single-core comparison protocol on the sphere fixture and reports
/// timings plus interior/exterior distance accuracy per method and size.
std::vector<BenchRow> run_approx_benchmark(const BenchConfig& config);

/// Uniform points on a circle (dim 2) or Fibonacci sphere (dim 3).
Eigen::MatrixXd sphere_surface_points(Eigen::Index n, double radius, int dim);

}  // namespace gpdf
