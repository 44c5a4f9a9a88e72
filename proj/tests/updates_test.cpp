#include "gpdf/updates.hpp"

#include "test_fixtures.hpp"

#include <gtest/gtest.h>

#include <Eigen/Cholesky>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>

using namespace gpdf;
using gpdf::testing::random_shell_queries;
using gpdf::testing::sphere_cloud;

namespace {

KernelConfig matern_half(double l) {
    KernelConfig cfg;
    cfg.kind = KernelKind::MaternHalf;
    cfg.length_scale = l;
    return cfg;
}

NoiseModel scalar_noise(double sigma_y2) {
    NoiseModel noise;
    noise.sigma_y2 = sigma_y2;
    return noise;
}

PointCloud cloud_of(const PointMatrix& points) {
    PointCloud cloud;
    cloud.points = points;
    return cloud;
}

double max_prediction_gap(const GpdfModel& a, const GpdfModel& b, const PointMatrix& queries) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < queries.rows(); ++i) {
        const auto [ma, va] = a.query_occupancy(queries.row(i));
        const auto [mb, vb] = b.query_occupancy(queries.row(i));
        worst = std::max({worst, std::abs(ma - mb), std::abs(va - vb)});
    }
    return worst;
}

}  // namespace

TEST(AddPoints, EmptyAddIsIdentity) {
    const PointMatrix base = sphere_cloud(50);
    const GpdfModel model = GpdfModel::fit(cloud_of(base), matern_half(0.5), scalar_noise(1e-6));
    PointCloud empty;
    empty.points.resize(0, 3);
    const GpdfModel same = add_points(model, empty);
    EXPECT_EQ(same.size(), model.size());
    const PointMatrix queries = random_shell_queries(20, 0.5, 2.0, 2);
    EXPECT_EQ(max_prediction_gap(model, same, queries), 0.0);
}

TEST(AddPoints, MatchesBatchRefit) {
    const PointMatrix all = sphere_cloud(110);
    const PointMatrix base = all.topRows(100);
    const PointMatrix extra = all.bottomRows(10);
    const KernelConfig cfg = matern_half(0.5);
    const NoiseModel noise = scalar_noise(1e-6);

    const GpdfModel incremental =
        add_points(GpdfModel::fit(cloud_of(base), cfg, noise), cloud_of(extra));
    const GpdfModel batch = GpdfModel::fit(cloud_of(all), cfg, noise);

    const PointMatrix queries = random_shell_queries(80, 0.5, 2.0, 3);
    EXPECT_LT(max_prediction_gap(incremental, batch, queries), 1e-8);
}

TEST(AddPoints, FeatureRowsCarriedThrough) {
    PointCloud base = cloud_of(sphere_cloud(16));
    base.features = Eigen::MatrixXd::Constant(16, 3, 0.25);
    const GpdfModel model = GpdfModel::fit(base, matern_half(0.6), scalar_noise(1e-6));
    PointCloud extra = cloud_of(sphere_cloud(4, 1.3));
    extra.features = Eigen::MatrixXd::Constant(4, 3, 0.75);
    const GpdfModel grown = add_points(model, extra);
    ASSERT_TRUE(grown.feature_table());
    EXPECT_EQ(grown.feature_table()->rows(), 20);
    PointCloud mismatched = cloud_of(sphere_cloud(4, 1.5));
    EXPECT_THROW(add_points(grown, mismatched), ValidationError);
}

TEST(AddPoints, IncrementalFasterThanBatchAtScale) {
    const PointMatrix base = sphere_cloud(1000);
    const PointMatrix extra = sphere_cloud(10, 1.05);
    const KernelConfig cfg = matern_half(0.3);
    const NoiseModel noise = scalar_noise(1e-6);
    const GpdfModel model = GpdfModel::fit(cloud_of(base), cfg, noise);

    PointMatrix all(1010, 3);
    all.topRows(1000) = base;
    all.bottomRows(10) = extra;

    const auto t0 = std::chrono::steady_clock::now();
    const GpdfModel incremental = add_points(model, cloud_of(extra));
    const auto t1 = std::chrono::steady_clock::now();
    const GpdfModel batch = GpdfModel::fit(cloud_of(all), cfg, noise);
    const auto t2 = std::chrono::steady_clock::now();

    const double inc_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    const double batch_ms = std::chrono::duration<double, std::milli>(t2 - t1).count();
    EXPECT_LT(5.0 * inc_ms, batch_ms) << "incremental " << inc_ms << " ms vs batch " << batch_ms
                                      << " ms";
}

TEST(RemovePoints, EmptyRemoveIsIdentity) {
    const GpdfModel model =
        GpdfModel::fit(cloud_of(sphere_cloud(30)), matern_half(0.5), scalar_noise(1e-6));
    const GpdfModel same = remove_points(model, {});
    EXPECT_EQ(same.size(), model.size());
}

TEST(RemovePoints, AddThenRemoveRoundTrip) {
    const PointMatrix base = sphere_cloud(100);
    const PointMatrix extra = sphere_cloud(10, 1.08);
    const KernelConfig cfg = matern_half(0.5);
    const NoiseModel noise = scalar_noise(1e-6);

    const GpdfModel original = GpdfModel::fit(cloud_of(base), cfg, noise);
    const GpdfModel grown = add_points(original, cloud_of(extra));
    std::vector<Eigen::Index> added(10);
    for (int i = 0; i < 10; ++i) added[i] = 100 + i;
    const GpdfModel back = remove_points(grown, added);

    const PointMatrix queries = random_shell_queries(200, 0.5, 2.0, 5);
    EXPECT_LT(max_prediction_gap(original, back, queries), 1e-8);
}

TEST(RemovePoints, MatchesBatchFitOnRetained) {
    const PointMatrix all = sphere_cloud(110);
    const KernelConfig cfg = matern_half(0.5);
    const NoiseModel noise = scalar_noise(1e-6);
    const GpdfModel full = GpdfModel::fit(cloud_of(all), cfg, noise);

    std::vector<Eigen::Index> drop;
    for (Eigen::Index i = 7; i < 110; i += 11) drop.push_back(i);
    const GpdfModel reduced = remove_points(full, drop);

    PointMatrix kept(110 - static_cast<Eigen::Index>(drop.size()), 3);
    Eigen::Index out = 0;
    for (Eigen::Index i = 0; i < 110; ++i)
        if (std::find(drop.begin(), drop.end(), i) == drop.end()) kept.row(out++) = all.row(i);
    const GpdfModel batch = GpdfModel::fit(cloud_of(kept), cfg, noise);

    const PointMatrix queries = random_shell_queries(80, 0.5, 2.0, 9);
    EXPECT_LT(max_prediction_gap(reduced, batch, queries), 1e-8);
}

TEST(RemovePoints, CannotRemoveEverything) {
    const GpdfModel model =
        GpdfModel::fit(cloud_of(sphere_cloud(3)), matern_half(0.5), scalar_noise(1e-6));
    EXPECT_THROW(remove_points(model, {0, 1, 2}), ValidationError);
    EXPECT_THROW(remove_points(model, {5}), ValidationError);
}

TEST(InducingObjective, FullRankEqualsExactMarginalLikelihood) {
    const PointMatrix x = sphere_cloud(60);
    const Eigen::VectorXd y = Eigen::VectorXd::Ones(60);
    const KernelConfig cfg = matern_half(0.5);
    const double sigma2 = 1e-2;

    const double collapsed = inducing_objective(x, y, x, cfg, sigma2);

    // Exact log marginal likelihood of the full GP.
    Eigen::MatrixXd k = kernel_matrix(x, x, cfg);
    k.diagonal().array() += sigma2;
    const Eigen::LLT<Eigen::MatrixXd> llt(k);
    double logdet = 0.0;
    for (Eigen::Index i = 0; i < 60; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
    const double quad = y.dot(llt.solve(y));
    const double exact = -0.5 * (60.0 * std::log(2.0 * std::numbers::pi) + logdet + quad);

    // With X_m = X the low-rank term equals K, so the trace penalty vanishes
    // (up to the stabilizing jitter) and the objective is the exact evidence.
    EXPECT_NEAR(collapsed, exact, 1e-4 * std::abs(exact));
}

TEST(InducingObjective, RequiresPositiveNoise) {
    const PointMatrix x = sphere_cloud(10);
    EXPECT_THROW(inducing_objective(x, Eigen::VectorXd::Ones(10), x, matern_half(0.5), 0.0),
                 ValidationError);
}

TEST(OptimizeInducing, ObjectiveNonDecreasingAndImproves) {
    const PointMatrix x = sphere_cloud(200);
    const Eigen::VectorXd y = Eigen::VectorXd::Ones(200);
    const KernelConfig cfg = matern_half(0.5);
    InducingOptions opts;
    opts.iterations = 10;
    const InducingResult result = optimize_inducing(x, y, 24, cfg, 1e-2, opts);
    ASSERT_GE(result.objective_trace.size(), 2u);
    for (size_t i = 1; i < result.objective_trace.size(); ++i)
        EXPECT_GE(result.objective_trace[i], result.objective_trace[i - 1]);
    EXPECT_GT(result.objective_trace.back(), result.objective_trace.front());
    EXPECT_EQ(result.points.rows(), 24);
}

TEST(OptimizeInducing, StaysInsideExpandedBoundingBox) {
    const PointMatrix x = sphere_cloud(150);
    const Eigen::VectorXd y = Eigen::VectorXd::Ones(150);
    const KernelConfig cfg = matern_half(0.4);
    InducingOptions opts;
    opts.iterations = 6;
    const InducingResult result = optimize_inducing(x, y, 16, cfg, 1e-2, opts);
    const Vec3 lo = x.colwise().minCoeff().array() - 2.0 * cfg.length_scale;
    const Vec3 hi = x.colwise().maxCoeff().array() + 2.0 * cfg.length_scale;
    for (Eigen::Index i = 0; i < result.points.rows(); ++i) {
        for (int c = 0; c < 3; ++c) {
            EXPECT_GE(result.points(i, c), lo(c) - 1e-12);
            EXPECT_LE(result.points(i, c), hi(c) + 1e-12);
        }
    }
}

TEST(OptimizeInducing, DownsampledFitStaysCloseToFullFit) {
    const PointMatrix x = sphere_cloud(300);
    const Eigen::VectorXd y = Eigen::VectorXd::Ones(300);
    const KernelConfig cfg = matern_half(0.8);  // roughly 2x the reduced-set spacing
    const NoiseModel noise = scalar_noise(1e-4);

    InducingOptions opts;
    opts.iterations = 8;
    const InducingResult inducing = optimize_inducing(x, y, 30, cfg, 1e-4, opts);

    const GpdfModel full = GpdfModel::fit(cloud_of(x), cfg, noise);
    const GpdfModel reduced = GpdfModel::fit(cloud_of(inducing.points), cfg, noise);

    // Distance error against the analytic sphere near the surface.
    const PointMatrix queries = random_shell_queries(80, 1.2, 1.5, 13);
    double full_err = 0.0, reduced_err = 0.0;
    for (Eigen::Index i = 0; i < queries.rows(); ++i) {
        const double truth = queries.row(i).norm() - 1.0;
        full_err += std::pow(full.query_distance(queries.row(i), 2).distance - truth, 2);
        reduced_err += std::pow(reduced.query_distance(queries.row(i), 2).distance - truth, 2);
    }
    full_err = std::sqrt(full_err / queries.rows());
    reduced_err = std::sqrt(reduced_err / queries.rows());
    EXPECT_LT(reduced_err, 2.0 * full_err);
}

TEST(OptimizeInducing, RejectsBadArguments) {
    const PointMatrix x = sphere_cloud(20);
    const Eigen::VectorXd y = Eigen::VectorXd::Ones(20);
    EXPECT_THROW(optimize_inducing(x, y, 0, matern_half(0.5), 1e-2), ValidationError);
    EXPECT_THROW(optimize_inducing(x, y, 21, matern_half(0.5), 1e-2), ValidationError);
}
