#pragma once

#include "gpdf/types.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <unordered_map>

namespace gpdf {

enum class DownsampleMode {
    MeanOnly,        // one point per cell, uncertainty = min covariance eigenvalue
    EigenAugmented,  // mean plus +/-1 sigma offsets along the non-minimal eigenvectors
};

/// Incremental voxel statistics: per cell the weight sum, weighted point sum
/// and weighted outer-product sum (the 13 values per 3D cell, plus weight).
/// Grids built over shards of a cloud merge cellwise.
class VoxelGrid {
public:
    struct Cell {
        double weight_sum = 0.0;
        Vec3 point_sum = Vec3::Zero();
        Mat3 outer_sum = Mat3::Zero();

        Vec3 mean() const { return point_sum / weight_sum; }
        Mat3 covariance() const {
            const Vec3 mu = mean();
            Mat3 cov = outer_sum / weight_sum - mu * mu.transpose();
            return 0.5 * (cov + cov.transpose().eval());
        }
    };

    explicit VoxelGrid(double voxel_size, std::optional<Vec3> origin = std::nullopt);

    double voxel_size() const { return voxel_size_; }
    const std::optional<Vec3>& origin() const { return origin_; }
    size_t cell_count() const { return cells_.size(); }

    /// Adds points (optionally weighted) to their cells. Order-independent.
    /// The origin is pinned to the minimum corner of the first batch when not
    /// given at construction.
    void accumulate(const PointMatrix& points, const Eigen::VectorXd* weights = nullptr);

    /// Cellwise addition of another grid with identical size and origin.
    void merge(const VoxelGrid& other);

    /// Emits the per-cell samples. MeanOnly yields one point per cell;
    /// EigenAugmented adds +/- sqrt(eigenvalue) offsets along each non-minimal
    /// eigenvector (up to 5 points per cell). Cells whose covariance has rank
    /// below 2 emit the mean only. Per-point input variance is the minimum
    /// covariance eigenvalue, isotropic.
    PointCloud emit_samples(DownsampleMode mode) const;

    const std::unordered_map<uint64_t, Cell>& cells() const { return cells_; }

private:
    uint64_t key_of(const Vec3& p) const;

    double voxel_size_;
    std::optional<Vec3> origin_;
    std::unordered_map<uint64_t, Cell> cells_;
};

}  // namespace gpdf
