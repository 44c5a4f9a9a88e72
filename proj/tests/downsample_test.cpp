#include "gpdf/downsample.hpp"

#include "gpdf/field.hpp"
#include "test_fixtures.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <random>

using namespace gpdf;
using gpdf::testing::random_shell_queries;
using gpdf::testing::sphere_cloud;

namespace {

PointMatrix single_row(double x, double y, double z) {
    PointMatrix m(1, 3);
    m << x, y, z;
    return m;
}

}  // namespace

TEST(VoxelGrid, SinglePointCell) {
    VoxelGrid grid(0.5, Vec3::Zero());
    grid.accumulate(single_row(0.2, 0.1, 0.3));
    ASSERT_EQ(grid.cell_count(), 1u);
    const auto& cell = grid.cells().begin()->second;
    EXPECT_NEAR((cell.mean() - Vec3(0.2, 0.1, 0.3)).norm(), 0.0, 1e-15);
    EXPECT_NEAR(cell.covariance().norm(), 0.0, 1e-15);
}

TEST(VoxelGrid, TwoPointStatistics) {
    VoxelGrid grid(4.0, Vec3::Constant(-2.0));
    PointMatrix pts(2, 3);
    pts << 0, 0, 0, 1, 0, 0;
    grid.accumulate(pts);
    ASSERT_EQ(grid.cell_count(), 1u);
    const auto& cell = grid.cells().begin()->second;
    EXPECT_NEAR(cell.mean().x(), 0.5, 1e-15);
    EXPECT_NEAR(cell.covariance()(0, 0), 0.25, 1e-15);
    EXPECT_NEAR(cell.covariance()(1, 1), 0.0, 1e-15);
}

TEST(VoxelGrid, BatchedEqualsIncremental) {
    const PointMatrix cloud = sphere_cloud(500);
    VoxelGrid once(0.25, Vec3::Constant(-1.5));
    once.accumulate(cloud);
    VoxelGrid twice(0.25, Vec3::Constant(-1.5));
    twice.accumulate(cloud.topRows(200));
    twice.accumulate(cloud.bottomRows(300));
    ASSERT_EQ(once.cell_count(), twice.cell_count());
    for (const auto& [key, cell] : once.cells()) {
        const auto it = twice.cells().find(key);
        ASSERT_NE(it, twice.cells().end());
        EXPECT_NEAR((cell.point_sum - it->second.point_sum).norm(), 0.0, 1e-12);
        EXPECT_NEAR((cell.outer_sum - it->second.outer_sum).norm(), 0.0, 1e-12);
        EXPECT_NEAR(cell.weight_sum - it->second.weight_sum, 0.0, 1e-12);
    }
}

TEST(VoxelGrid, MergePartitionOrderInvariance) {
    const PointMatrix cloud = sphere_cloud(600);
    const Vec3 origin = Vec3::Constant(-1.5);

    VoxelGrid direct(0.2, origin);
    direct.accumulate(cloud);

    VoxelGrid a(0.2, origin), b(0.2, origin), c(0.2, origin);
    a.accumulate(cloud.topRows(100));
    b.accumulate(cloud.middleRows(100, 250));
    c.accumulate(cloud.bottomRows(250));
    VoxelGrid merged(0.2, origin);
    merged.merge(c);
    merged.merge(a);
    merged.merge(b);

    const PointCloud da = direct.emit_samples(DownsampleMode::EigenAugmented);
    const PointCloud db = merged.emit_samples(DownsampleMode::EigenAugmented);
    ASSERT_EQ(da.size(), db.size());
    EXPECT_LT((da.points - db.points).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(VoxelGrid, MergeRejectsMismatchedGrids) {
    VoxelGrid a(0.2, Vec3::Zero());
    VoxelGrid b(0.3, Vec3::Zero());
    b.accumulate(single_row(0.1, 0.1, 0.1));
    EXPECT_THROW(a.merge(b), ValidationError);
}

TEST(VoxelGrid, RejectsNonPositiveWeights) {
    VoxelGrid grid(0.5);
    const PointMatrix p = single_row(0, 0, 0);
    Eigen::VectorXd w(1);
    w << -1.0;
    EXPECT_THROW(grid.accumulate(p, &w), ValidationError);
}

TEST(VoxelGrid, WeightedMeanMatchesHandComputation) {
    VoxelGrid grid(4.0, Vec3::Constant(-2.0));
    PointMatrix pts(2, 3);
    pts << 0, 0, 0, 1, 0, 0;
    Eigen::VectorXd w(2);
    w << 1.0, 3.0;
    grid.accumulate(pts, &w);
    const auto& cell = grid.cells().begin()->second;
    EXPECT_NEAR(cell.mean().x(), 0.75, 1e-15);
}

TEST(EmitSamples, EmptyGridThrows) {
    VoxelGrid grid(0.5);
    EXPECT_THROW(grid.emit_samples(DownsampleMode::MeanOnly), ValidationError);
}

TEST(EmitSamples, DegenerateCellEmitsCoincidentMean) {
    VoxelGrid grid(0.5, Vec3::Zero());
    grid.accumulate(single_row(0.2, 0.2, 0.2));
    const PointCloud out = grid.emit_samples(DownsampleMode::EigenAugmented);
    // Zero covariance leaves no tangent directions; everything emitted
    // coincides with the mean.
    for (Eigen::Index i = 0; i < out.size(); ++i)
        EXPECT_NEAR((Vec3(out.points.row(i)) - Vec3(0.2, 0.2, 0.2)).norm(), 0.0, 1e-15);
}

TEST(EmitSamples, PlanarCellOffsetsStayInPlane) {
    // Points on z = 0 inside one large cell: the minimal eigenvector is the
    // plane normal and the emitted offsets stay in-plane.
    VoxelGrid grid(8.0, Vec3::Constant(-4.0));
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> coord(-1.0, 1.0);
    PointMatrix pts(60, 3);
    for (Eigen::Index i = 0; i < 60; ++i) pts.row(i) << coord(rng), coord(rng), 0.0;
    grid.accumulate(pts);
    const PointCloud out = grid.emit_samples(DownsampleMode::EigenAugmented);
    ASSERT_EQ(out.size(), 5);
    for (Eigen::Index i = 0; i < out.size(); ++i) EXPECT_NEAR(out.points(i, 2), 0.0, 1e-12);
}

TEST(EmitSamples, NoisyPlaneNormalWithinFiveDegrees) {
    std::mt19937 rng(13);
    std::uniform_real_distribution<double> coord(-0.5, 0.5);
    std::normal_distribution<double> jitter(0.0, 0.005);
    VoxelGrid grid(1.0, Vec3::Constant(-0.5));
    PointMatrix pts(400, 3);
    for (Eigen::Index i = 0; i < 400; ++i)
        pts.row(i) << coord(rng), coord(rng), jitter(rng);
    grid.accumulate(pts);
    for (const auto& [key, cell] : grid.cells()) {
        Eigen::SelfAdjointEigenSolver<Mat3> eig(cell.covariance());
        const Vec3 normal = eig.eigenvectors().col(0);
        const double angle =
            std::acos(std::min(std::abs(normal.dot(Vec3::UnitZ())), 1.0)) * 180.0 /
            std::numbers::pi;
        EXPECT_LT(angle, 5.0);
    }
}

TEST(EmitSamples, EigenAugmentedFiveSamplesPerFullRankCell) {
    std::mt19937 rng(17);
    std::normal_distribution<double> gauss(0.0, 0.1);
    VoxelGrid grid(2.0, Vec3::Constant(-1.0));
    PointMatrix pts(100, 3);
    for (Eigen::Index i = 0; i < pts.size(); ++i) pts.data()[i] = gauss(rng);
    grid.accumulate(pts);
    ASSERT_EQ(grid.cell_count(), 1u);
    const PointCloud out = grid.emit_samples(DownsampleMode::EigenAugmented);
    EXPECT_EQ(out.size(), 5);
    ASSERT_TRUE(out.input_variance);
    EXPECT_GE(out.input_variance->minCoeff(), 0.0);
}

TEST(EmitSamples, EigenAugmentedVarianceFieldCloserToRawThanMeanOnly) {
    // The eigen-augmented samples reproduce the raw fit's surface variance
    // field better than bare cell means do.
    const PointMatrix raw = sphere_cloud(1200);
    VoxelGrid grid(0.35, Vec3::Constant(-1.2));
    grid.accumulate(raw);
    const PointCloud mean_cloud = grid.emit_samples(DownsampleMode::MeanOnly);
    const PointCloud eigen_cloud = grid.emit_samples(DownsampleMode::EigenAugmented);

    KernelConfig cfg;
    cfg.kind = KernelKind::MaternHalf;
    cfg.length_scale = 0.35;
    NoiseModel noise;
    noise.sigma_y2 = 1e-6;

    PointCloud raw_cloud;
    raw_cloud.points = raw;
    const GpdfModel raw_fit = GpdfModel::fit(raw_cloud, cfg, noise);
    PointCloud mc;
    mc.points = mean_cloud.points;
    const GpdfModel mean_fit = GpdfModel::fit(mc, cfg, noise);
    PointCloud ec;
    ec.points = eigen_cloud.points;
    const GpdfModel eigen_fit = GpdfModel::fit(ec, cfg, noise);

    const PointMatrix queries = random_shell_queries(150, 0.9, 1.3, 21);
    double mean_gap = 0.0, eigen_gap = 0.0;
    for (Eigen::Index i = 0; i < queries.rows(); ++i) {
        const double raw_var = raw_fit.query_occupancy(queries.row(i)).second;
        mean_gap += std::pow(mean_fit.query_occupancy(queries.row(i)).second - raw_var, 2);
        eigen_gap += std::pow(eigen_fit.query_occupancy(queries.row(i)).second - raw_var, 2);
    }
    EXPECT_LT(eigen_gap, mean_gap);
}

TEST(VoxelGrid, InvalidVoxelSizeRejected) {
    EXPECT_THROW(VoxelGrid(0.0), ValidationError);
    EXPECT_THROW(VoxelGrid(-0.1), ValidationError);
}
