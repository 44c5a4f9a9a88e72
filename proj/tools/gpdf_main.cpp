#include "gpdf/approx.hpp"
#include "gpdf/downsample.hpp"
#include "gpdf/explore.hpp"
#include "gpdf/field.hpp"
#include "gpdf/io.hpp"
#include "gpdf/render.hpp"
#include "gpdf/sim.hpp"
#include "gpdf/updates.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <Eigen/Core>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

namespace {

using nlohmann::json;

unsigned long env_seed(unsigned long fallback) {
    if (const char* s = std::getenv("GPDF_SEED")) return std::strtoul(s, nullptr, 10);
    return fallback;
}

gpdf::NoiseModel make_noise(const std::string& mode, double sigma_y2, double sigma_x2,
                            int refit_iterations) {
    gpdf::NoiseModel noise;
    if (mode == "scalar") {
        noise.mode = gpdf::NoiseMode::ScalarObservation;
    } else if (mode == "noisy_input") {
        noise.mode = gpdf::NoiseMode::NoisyInput;
    } else {
        throw gpdf::ValidationError("noise mode must be 'scalar' or 'noisy_input'");
    }
    noise.sigma_y2 = sigma_y2;
    noise.sigma_x = gpdf::Vec3::Constant(sigma_x2);
    noise.refit_iterations = refit_iterations;
    return noise;
}

int run(int argc, char** argv) {
    CLI::App app{"Gaussian process distance field toolkit"};
    app.require_subcommand(1);

    if (const char* threads = std::getenv("GPDF_THREADS"))
        Eigen::setNbThreads(std::atoi(threads));

    // ---- fit ----
    auto* fit_cmd = app.add_subcommand("fit", "Fit a GPDF from a point cloud");
    std::string fit_in, fit_out;
    std::string fit_kernel = "matern_half", fit_noise_mode = "scalar";
    double fit_l = 0.0, fit_alpha = 1.0, fit_sigma_y2 = 0.0, fit_sigma_x2 = 0.0;
    int fit_refits = 2;
    fit_cmd->add_option("--in", fit_in, "input point cloud (xyz or ascii ply)")->required();
    fit_cmd->add_option("--out", fit_out, "output model JSON")->required();
    fit_cmd->add_option("--kernel", fit_kernel, "kernel kind");
    fit_cmd->add_option("--length-scale", fit_l, "length scale (0: 2x median spacing)");
    fit_cmd->add_option("--alpha", fit_alpha, "rational quadratic alpha");
    fit_cmd->add_option("--noise-mode", fit_noise_mode, "scalar | noisy_input");
    fit_cmd->add_option("--sigma-y2", fit_sigma_y2, "observation noise variance");
    fit_cmd->add_option("--sigma-x2", fit_sigma_x2, "isotropic input variance (noisy_input)");
    fit_cmd->add_option("--refit-iterations", fit_refits, "noisy-input refit rounds");

    // ---- query ----
    auto* query_cmd = app.add_subcommand("query", "Query distances and derivatives");
    std::string query_model, query_points, query_grid;
    int query_refine = gpdf::GpdfModel::kDefaultRefineIters;
    query_cmd->add_option("--model", query_model, "model JSON")->required();
    query_cmd->add_option("--points", query_points, "query points file (xyz)");
    query_cmd->add_option("--grid", query_grid,
                          "grid spec lo,hi,count applied per axis (e.g. -2,2,11)");
    query_cmd->add_option("--refine", query_refine, "ray-march refinement iterations");

    // ---- render ----
    auto* render_cmd = app.add_subcommand("render", "Render a fitted model");
    std::string render_model, render_manifest, render_prefix = "render", render_mode = "volumetric";
    int render_samples = 64;
    double render_tmax = 10.0;
    render_cmd->add_option("--model", render_model, "model JSON")->required();
    render_cmd->add_option("--views", render_manifest, "view manifest JSON")->required();
    render_cmd->add_option("--out-prefix", render_prefix, "output file prefix");
    render_cmd->add_option("--mode", render_mode, "volumetric | spheretrace");
    render_cmd->add_option("--samples", render_samples, "ray samples (volumetric)");
    render_cmd->add_option("--t-max", render_tmax, "ray length bound");

    // ---- downsample ----
    auto* down_cmd = app.add_subcommand("downsample", "Voxel downsample a point cloud");
    std::string down_in, down_out, down_mode = "mean";
    double down_voxel = 0.05;
    down_cmd->add_option("--in", down_in, "input point cloud")->required();
    down_cmd->add_option("--out", down_out, "output point cloud")->required();
    down_cmd->add_option("--voxel", down_voxel, "voxel size");
    down_cmd->add_option("--mode", down_mode, "mean | eigen");

    // ---- bench-approx ----
    auto* bench_cmd = app.add_subcommand("bench-approx", "Kernel approximation comparison");
    std::string bench_methods = "ski,hilbert,nystrom", bench_out;
    std::string bench_nsweep = "1000,2000,4000";
    int bench_dim = 2, bench_grid = 41;
    double bench_l = 0.5, bench_box = 5.0;
    long long bench_rank = 0;
    bench_cmd->add_option("--methods", bench_methods, "comma-separated methods");
    bench_cmd->add_option("--n-sweep", bench_nsweep, "comma-separated training sizes");
    bench_cmd->add_option("--dim", bench_dim, "input dimension (2 or 3)");
    bench_cmd->add_option("--grid", bench_grid, "grid nodes per axis");
    bench_cmd->add_option("--length-scale", bench_l, "kernel length scale");
    bench_cmd->add_option("--box", bench_box, "half-width of the task box");
    bench_cmd->add_option("--nystrom-rank", bench_rank, "Nystrom rank (0: full)");
    bench_cmd->add_option("--out", bench_out, "output JSON report (default stdout)");

    // ---- nbv ----
    auto* nbv_cmd = app.add_subcommand("nbv", "Next-best-view from an ensemble");
    std::string nbv_model, nbv_candidates;
    std::string nbv_scales = "0.5,1.0,2.0";
    int nbv_samples = 48;
    double nbv_tmax = 10.0;
    nbv_cmd->add_option("--model", nbv_model, "model JSON")->required();
    nbv_cmd->add_option("--candidates", nbv_candidates, "view manifest with candidate poses")
        ->required();
    nbv_cmd->add_option("--scales", nbv_scales, "ensemble length-scale multipliers");
    nbv_cmd->add_option("--samples", nbv_samples, "ray samples");
    nbv_cmd->add_option("--t-max", nbv_tmax, "ray length bound");

    // ---- touch ----
    auto* touch_cmd = app.add_subcommand("touch", "Most uncertain surface point");
    std::string touch_model, touch_out;
    int touch_starts = 16, touch_iters = 20;
    unsigned long touch_seed = 1;
    touch_cmd->add_option("--model", touch_model, "model JSON")->required();
    touch_cmd->add_option("--starts", touch_starts, "ascent start count");
    touch_cmd->add_option("--iterations", touch_iters, "ascent iterations");
    touch_cmd->add_option("--seed", touch_seed, "start sampling seed");
    touch_cmd->add_option("--out", touch_out, "output JSON (default stdout)");

    // ---- explore ----
    auto* explore_cmd = app.add_subcommand("explore", "Closed-loop exploration harness");
    std::string explore_config, explore_metrics = "metrics.jsonl", explore_model_out;
    unsigned long explore_seed_override = 0;
    bool explore_seed_set = false;
    explore_cmd->add_option("--config", explore_config, "run config JSON")->required();
    explore_cmd->add_option("--metrics", explore_metrics, "metrics JSONL output");
    explore_cmd->add_option("--model-out", explore_model_out, "final model output");
    explore_cmd->add_option("--seed", explore_seed_override, "override config seed")
        ->each([&](const std::string&) { explore_seed_set = true; });

    CLI11_PARSE(app, argc, argv);

    if (*fit_cmd) {
        gpdf::PointCloud cloud = gpdf::read_point_cloud(fit_in);
        gpdf::KernelConfig kernel;
        kernel.kind = gpdf::kernel_kind_from_string(fit_kernel);
        kernel.length_scale = fit_l > 0.0 ? fit_l : gpdf::default_length_scale(cloud.points);
        kernel.alpha = fit_alpha;
        const gpdf::NoiseModel noise =
            make_noise(fit_noise_mode, fit_sigma_y2, fit_sigma_x2, fit_refits);
        const gpdf::GpdfModel model = gpdf::GpdfModel::fit(cloud, kernel, noise);
        gpdf::save_model(fit_out, model);
        std::cout << "fitted " << model.size() << " points, length scale "
                  << kernel.length_scale << ", jitter " << model.jitter() << "\n";
        return 0;
    }

    if (*query_cmd) {
        const gpdf::GpdfModel model = gpdf::load_model(query_model);
        gpdf::PointMatrix queries;
        if (!query_points.empty()) {
            queries = gpdf::read_point_cloud(query_points).points;
        } else if (!query_grid.empty()) {
            double lo, hi;
            int count;
            if (std::sscanf(query_grid.c_str(), "%lf,%lf,%d", &lo, &hi, &count) != 3 || count < 2)
                throw gpdf::ValidationError("--grid expects lo,hi,count");
            queries.resize(static_cast<Eigen::Index>(count) * count * count, 3);
            Eigen::Index row = 0;
            for (int i = 0; i < count; ++i)
                for (int j = 0; j < count; ++j)
                    for (int k = 0; k < count; ++k)
                        queries.row(row++) << lo + (hi - lo) * i / (count - 1),
                            lo + (hi - lo) * j / (count - 1), lo + (hi - lo) * k / (count - 1);
        } else {
            throw gpdf::ValidationError("query needs --points or --grid");
        }
        std::cout << "# x y z distance grad_x grad_y grad_z mean_curv gauss_curv occ_var "
                     "eikonal\n";
        std::cout.precision(12);
        for (Eigen::Index i = 0; i < queries.rows(); ++i) {
            const gpdf::Vec3 x = queries.row(i);
            const gpdf::QueryResult r = model.query_distance(x, query_refine);
            std::cout << x.x() << ' ' << x.y() << ' ' << x.z() << ' ' << r.distance << ' '
                      << r.gradient.x() << ' ' << r.gradient.y() << ' ' << r.gradient.z() << ' '
                      << r.mean_curvature << ' ' << r.gaussian_curvature << ' '
                      << r.occupancy_var << ' ' << r.eikonal_uncertainty << '\n';
        }
        return 0;
    }

    if (*render_cmd) {
        const gpdf::GpdfModel model = gpdf::load_model(render_model);
        const gpdf::ViewManifest manifest = gpdf::read_view_manifest(render_manifest);
        for (size_t i = 0; i < manifest.views.size(); ++i) {
            gpdf::CameraModel cam = manifest.intrinsics;
            cam.rotation = manifest.views[i].rotation;
            cam.translation = manifest.views[i].translation;
            gpdf::RenderedImage img;
            if (render_mode == "volumetric") {
                gpdf::VolumetricOptions opts;
                opts.n_samples = render_samples;
                opts.t_max = render_tmax;
                img = gpdf::render_volumetric(model, cam, opts);
            } else if (render_mode == "spheretrace") {
                gpdf::SphereTraceRenderOptions opts;
                opts.t_max = render_tmax;
                img = gpdf::render_spheretrace(model, cam, opts);
            } else {
                throw gpdf::ValidationError("render mode must be volumetric or spheretrace");
            }
            gpdf::write_render(render_prefix + "_" + std::to_string(i), img);
        }
        std::cout << "rendered " << manifest.views.size() << " views\n";
        return 0;
    }

    if (*down_cmd) {
        const gpdf::PointCloud cloud = gpdf::read_point_cloud(down_in);
        gpdf::VoxelGrid grid(down_voxel);
        grid.accumulate(cloud.points, cloud.weights ? &*cloud.weights : nullptr);
        const gpdf::DownsampleMode mode = down_mode == "eigen"
                                              ? gpdf::DownsampleMode::EigenAugmented
                                              : gpdf::DownsampleMode::MeanOnly;
        const gpdf::PointCloud out = grid.emit_samples(mode);
        gpdf::write_point_cloud(down_out, out);
        std::cout << grid.cell_count() << " cells, " << out.size() << " samples\n";
        return 0;
    }

    if (*bench_cmd) {
        Eigen::setNbThreads(1);  // single-core protocol
        gpdf::BenchConfig config;
        config.methods.clear();
        {
            std::istringstream ms(bench_methods);
            std::string tok;
            while (std::getline(ms, tok, ','))
                config.methods.push_back(gpdf::approx_method_from_string(tok));
        }
        config.n_sweep.clear();
        {
            std::istringstream ns(bench_nsweep);
            std::string tok;
            while (std::getline(ns, tok, ',')) config.n_sweep.push_back(std::stoll(tok));
        }
        config.dim = bench_dim;
        config.grid_nodes = bench_grid;
        config.length_scale = bench_l;
        config.box_half_width = bench_box;
        config.nystrom_rank = bench_rank;
        const std::vector<gpdf::BenchRow> rows = gpdf::run_approx_benchmark(config);
        json report = json::array();
        for (const gpdf::BenchRow& r : rows) {
            report.push_back({{"method", r.method},
                              {"n", r.n},
                              {"m", r.m},
                              {"build_ms", r.build_ms},
                              {"fit_ms", r.fit_ms},
                              {"query_ms_single", r.query_ms_single},
                              {"query_ms_batch", r.query_ms_batch},
                              {"rms_distance_error_inside", r.rms_distance_error_inside},
                              {"rms_distance_error_outside",
                               std::isfinite(r.rms_distance_error_outside)
                                   ? json(r.rms_distance_error_outside)
                                   : json("out_of_domain")}});
        }
        if (bench_out.empty()) {
            std::cout << report.dump(1) << '\n';
        } else {
            std::ofstream(bench_out) << report.dump(1) << '\n';
            std::cout << "wrote " << bench_out << '\n';
        }
        return 0;
    }

    if (*nbv_cmd) {
        const gpdf::GpdfModel model = gpdf::load_model(nbv_model);
        const gpdf::ViewManifest manifest = gpdf::read_view_manifest(nbv_candidates);
        std::vector<gpdf::CameraModel> candidates;
        for (const auto& entry : manifest.views) {
            gpdf::CameraModel cam = manifest.intrinsics;
            cam.rotation = entry.rotation;
            cam.translation = entry.translation;
            candidates.push_back(cam);
        }
        gpdf::PointCloud cloud;
        cloud.points = model.points();
        if (model.feature_table()) cloud.features = *model.feature_table();
        if (model.input_variance()) cloud.input_variance = *model.input_variance();
        std::vector<double> scales;
        {
            std::istringstream ss(nbv_scales);
            std::string tok;
            while (std::getline(ss, tok, ',')) scales.push_back(std::stod(tok));
        }
        const gpdf::Ensemble ensemble =
            gpdf::Ensemble::from_cloud(cloud, model.kernel(), model.noise(), scales);
        gpdf::InformationGainOptions opts;
        opts.render.n_samples = nbv_samples;
        opts.render.t_max = nbv_tmax;
        const gpdf::NextBestView best = gpdf::next_best_view(ensemble, candidates, opts);
        json out;
        out["best_index"] = best.index;
        out["best_gain"] = best.gain;
        out["gains"] = best.gains;
        std::cout << out.dump(1) << '\n';
        return 0;
    }

    if (*touch_cmd) {
        const gpdf::GpdfModel model = gpdf::load_model(touch_model);
        gpdf::TouchSearchOptions opts;
        opts.n_starts = touch_starts;
        opts.iterations = touch_iters;
        opts.seed = static_cast<unsigned>(env_seed(touch_seed));
        const gpdf::TouchTarget target = gpdf::most_uncertain_surface_point(model, opts);
        json out;
        out["point"] = {target.point.x(), target.point.y(), target.point.z()};
        out["normal"] = {target.normal.x(), target.normal.y(), target.normal.z()};
        out["variance"] = target.variance;
        out["trace_length"] = target.ascent_trace.size();
        if (touch_out.empty()) {
            std::cout << out.dump(1) << '\n';
        } else {
            std::ofstream(touch_out) << out.dump(1) << '\n';
            std::cout << "wrote " << touch_out << '\n';
        }
        return 0;
    }

    if (*explore_cmd) {
        gpdf::ExplorationConfig config = gpdf::read_exploration_config(explore_config);
        if (explore_seed_set) config.seed = explore_seed_override;
        config.seed = env_seed(config.seed);
        const gpdf::ExplorationResult result = gpdf::run_exploration(config);
        gpdf::write_metrics(explore_metrics, result.log);
        if (!explore_model_out.empty()) gpdf::save_model(explore_model_out, result.model);
        std::cout << "explored " << result.log.size() << " steps\n";
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const gpdf::OutOfDomainError& e) {
        std::cerr << "validation error: " << e.what() << '\n';
        return 2;
    } catch (const gpdf::ValidationError& e) {
        std::cerr << "validation error: " << e.what() << '\n';
        return 2;
    } catch (const gpdf::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return 3;
    } catch (const gpdf::IoError& e) {
        std::cerr << "io error: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
