#include "gpdf/downsample.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <vector>

namespace gpdf {

namespace {

constexpr int kAxisBits = 21;
constexpr int64_t kAxisOffset = int64_t{1} << (kAxisBits - 1);
constexpr size_t kMaxCells = 10'000'000;

}  // namespace

VoxelGrid::VoxelGrid(double voxel_size, std::optional<Vec3> origin)
    : voxel_size_(voxel_size), origin_(origin) {
    if (!(voxel_size > 0.0)) throw ValidationError("voxel size must be positive");
}

uint64_t VoxelGrid::key_of(const Vec3& p) const {
    uint64_t key = 0;
    for (int c = 0; c < 3; ++c) {
        const int64_t idx =
            static_cast<int64_t>(std::floor((p(c) - (*origin_)(c)) / voxel_size_)) + kAxisOffset;
        if (idx < 0 || idx >= (int64_t{1} << kAxisBits))
            throw ValidationError("point too far from the voxel grid origin");
        key = (key << kAxisBits) | static_cast<uint64_t>(idx);
    }
    return key;
}

void VoxelGrid::accumulate(const PointMatrix& points, const Eigen::VectorXd* weights) {
    if (!points.allFinite()) throw ValidationError("voxel accumulate: non-finite point");
    if (weights != nullptr) {
        if (weights->size() != points.rows())
            throw ValidationError("voxel accumulate: weight count mismatch");
        if ((weights->array() <= 0.0).any())
            throw ValidationError("voxel accumulate: weights must be positive");
    }
    if (points.rows() == 0) return;
    if (!origin_) origin_ = points.colwise().minCoeff();

    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        const Vec3 p = points.row(i);
        const double w = weights != nullptr ? (*weights)(i) : 1.0;
        Cell& cell = cells_[key_of(p)];
        cell.weight_sum += w;
        cell.point_sum += w * p;
        cell.outer_sum += w * p * p.transpose();
    }
    if (cells_.size() > kMaxCells)
        throw ValidationError("voxel grid exceeds the 1e7 cell limit");
}

void VoxelGrid::merge(const VoxelGrid& other) {
    if (other.cells_.empty()) return;
    if (!origin_) {
        origin_ = other.origin_;
    } else if (other.origin_ &&
               ((*origin_ - *other.origin_).cwiseAbs().maxCoeff() > 0.0 ||
                voxel_size_ != other.voxel_size_)) {
        throw ValidationError("voxel grids must share size and origin to merge");
    }
    for (const auto& [key, cell] : other.cells_) {
        Cell& mine = cells_[key];
        mine.weight_sum += cell.weight_sum;
        mine.point_sum += cell.point_sum;
        mine.outer_sum += cell.outer_sum;
    }
}

PointCloud VoxelGrid::emit_samples(DownsampleMode mode) const {
    if (cells_.empty()) throw ValidationError("emit_samples on an empty voxel grid");

    std::vector<uint64_t> keys;
    keys.reserve(cells_.size());
    for (const auto& [key, cell] : cells_) keys.push_back(key);
    std::sort(keys.begin(), keys.end());

    std::vector<Vec3> points;
    std::vector<double> sigma;
    points.reserve(cells_.size() * (mode == DownsampleMode::EigenAugmented ? 5 : 1));

    for (const uint64_t key : keys) {
        const Cell& cell = cells_.at(key);
        const Vec3 mu = cell.mean();
        const Mat3 cov = cell.covariance();
        Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
        const Vec3 evals = eig.eigenvalues().cwiseMax(0.0);  // ascending
        const double min_eval = evals(0);

        points.push_back(mu);
        sigma.push_back(min_eval);
        if (mode == DownsampleMode::EigenAugmented) {
            // Offsets along the two non-minimal eigenvectors, 1 sigma each.
            // Rank < 2 leaves no tangent directions, so only the mean goes out.
            const double tol = 1e-12 * std::max(1.0, evals(2));
            if (evals(1) > tol) {
                for (int a = 1; a < 3; ++a) {
                    const Vec3 offset = std::sqrt(evals(a)) * eig.eigenvectors().col(a);
                    points.push_back(mu + offset);
                    sigma.push_back(min_eval);
                    points.push_back(mu - offset);
                    sigma.push_back(min_eval);
                }
            }
        }
    }

    PointCloud out;
    out.points.resize(static_cast<Eigen::Index>(points.size()), 3);
    PointMatrix variance(static_cast<Eigen::Index>(points.size()), 3);
    for (size_t i = 0; i < points.size(); ++i) {
        out.points.row(static_cast<Eigen::Index>(i)) = points[i];
        variance.row(static_cast<Eigen::Index>(i)).setConstant(sigma[i]);
    }
    out.input_variance = variance;
    return out;
}

}  // namespace gpdf
