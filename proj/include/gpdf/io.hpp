#pragma once

#include "gpdf/camera.hpp"
#include "gpdf/field.hpp"
#include "gpdf/render.hpp"
#include "gpdf/sim.hpp"
#include "gpdf/types.hpp"

#include <string>
#include <vector>

namespace gpdf {

/// ASCII XYZ: "x y z [r g b] [sx sy sz]" per line; '#' comments. PLY-ASCII
/// with x/y/z (and optional red/green/blue) properties is accepted on read.
PointCloud read_point_cloud(const std::string& path);
void write_point_cloud(const std::string& path, const PointCloud& cloud);

/// 8-bit binary PPM (P6) for color; 32-bit little-endian PFM (Pf) for scalar
/// channels.
void write_ppm(const std::string& path, const Eigen::MatrixXd& r, const Eigen::MatrixXd& g,
               const Eigen::MatrixXd& b);
void write_pfm(const std::string& path, const Eigen::MatrixXd& values);
Eigen::MatrixXd read_pfm(const std::string& path);
void read_ppm(const std::string& path, Eigen::MatrixXd& r, Eigen::MatrixXd& g,
              Eigen::MatrixXd& b);

/// Writes color/depth/variance planes of a render with a common prefix.
void write_render(const std::string& prefix, const RenderedImage& image);

/// Model container: kernel, noise, points, realized noise diagonal, features.
void save_model(const std::string& path, const GpdfModel& model);
GpdfModel load_model(const std::string& path);

/// View manifest: shared intrinsics plus per-view poses and image paths.
struct ViewManifest {
    CameraModel intrinsics;
    struct Entry {
        Mat3 rotation;
        Vec3 translation;
        std::string color_path;  // empty: none
        std::string depth_path;
    };
    std::vector<Entry> views;
};
ViewManifest read_view_manifest(const std::string& path);
void write_view_manifest(const std::string& path, const ViewManifest& manifest);

/// Loads manifest entries into reference views (reads the listed images).
std::vector<ReferenceView> load_reference_views(const ViewManifest& manifest,
                                                const std::string& base_dir);

AnalyticScene read_scene(const std::string& path);
void write_scene(const std::string& path, const AnalyticScene& scene);

ExplorationConfig read_exploration_config(const std::string& path);
void write_exploration_config(const std::string& path, const ExplorationConfig& config);

/// JSON-lines exploration metrics.
std::string metrics_to_jsonl(const std::vector<ExplorationStepLog>& log);
void write_metrics(const std::string& path, const std::vector<ExplorationStepLog>& log);

}  // namespace gpdf
