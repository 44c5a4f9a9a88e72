#include "gpdf/io.hpp"

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <sstream>
#include <vector>

namespace gpdf {

using nlohmann::json;

namespace {

std::ifstream open_in(const std::string& path, std::ios::openmode mode = std::ios::in) {
    std::ifstream in(path, mode);
    if (!in) throw IoError("cannot open for reading: " + path);
    return in;
}

std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::out) {
    std::ofstream out(path, mode);
    if (!out) throw IoError("cannot open for writing: " + path);
    return out;
}

json matrix_to_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const json& rows) {
    if (!rows.is_array()) throw IoError("expected a JSON array of rows");
    const Eigen::Index r = static_cast<Eigen::Index>(rows.size());
    if (r == 0) return {};
    const Eigen::Index c = static_cast<Eigen::Index>(rows[0].size());
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i) {
        if (static_cast<Eigen::Index>(rows[i].size()) != c)
            throw IoError("ragged JSON matrix");
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rows[i][j].get<double>();
    }
    return m;
}

json vec3_to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec3_from_json(const json& j) {
    if (!j.is_array() || j.size() != 3) throw IoError("expected a 3-element array");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json camera_to_json(const CameraModel& cam) {
    json j;
    j["fx"] = cam.fx;
    j["fy"] = cam.fy;
    j["cx"] = cam.cx;
    j["cy"] = cam.cy;
    j["width"] = cam.width;
    j["height"] = cam.height;
    json r = json::array();
    for (int i = 0; i < 3; ++i)
        for (int c = 0; c < 3; ++c) r.push_back(cam.rotation(i, c));
    j["rotation"] = std::move(r);  // row-major
    j["translation"] = vec3_to_json(cam.translation);
    return j;
}

CameraModel camera_from_json(const json& j) {
    CameraModel cam;
    cam.fx = j.at("fx").get<double>();
    cam.fy = j.at("fy").get<double>();
    cam.cx = j.at("cx").get<double>();
    cam.cy = j.at("cy").get<double>();
    cam.width = j.at("width").get<int>();
    cam.height = j.at("height").get<int>();
    const json& r = j.at("rotation");
    if (r.size() != 9) throw IoError("camera rotation must have 9 row-major entries");
    for (int i = 0; i < 3; ++i)
        for (int c = 0; c < 3; ++c) cam.rotation(i, c) = r[3 * i + c].get<double>();
    cam.translation = vec3_from_json(j.at("translation"));
    return cam;
}

void check_no_unknown_keys(const json& j, std::initializer_list<const char*> known,
                           const std::string& context) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* key : known)
            if (it.key() == key) { ok = true; break; }
        if (!ok) throw ValidationError("unknown key '" + it.key() + "' in " + context);
    }
}

}  // namespace

PointCloud read_point_cloud(const std::string& path) {
    std::ifstream in = open_in(path);
    std::string first_line;
    std::getline(in, first_line);
    in.seekg(0);

    PointCloud cloud;
    std::vector<std::array<double, 3>> pts;
    std::vector<std::array<double, 3>> rgb;
    std::vector<std::array<double, 3>> sig;

    if (first_line.rfind("ply", 0) == 0) {
        // Minimal ascii PLY: vertex element with x y z [red green blue].
        std::string line;
        Eigen::Index count = 0;
        std::vector<std::string> props;
        bool ascii = false;
        while (std::getline(in, line)) {
            std::istringstream ls(line);
            std::string tok;
            ls >> tok;
            if (tok == "format") {
                std::string fmt;
                ls >> fmt;
                ascii = fmt == "ascii";
            } else if (tok == "element") {
                std::string what;
                ls >> what >> count;
                if (what != "vertex") count = count;  // other elements unsupported below
            } else if (tok == "property") {
                std::string type, name;
                ls >> type >> name;
                props.push_back(name);
            } else if (tok == "end_header") {
                break;
            }
        }
        if (!ascii) throw IoError("only ascii PLY is supported: " + path);
        int xi = -1, yi = -1, zi = -1, ri = -1, gi = -1, bi = -1;
        for (size_t i = 0; i < props.size(); ++i) {
            if (props[i] == "x") xi = static_cast<int>(i);
            if (props[i] == "y") yi = static_cast<int>(i);
            if (props[i] == "z") zi = static_cast<int>(i);
            if (props[i] == "red") ri = static_cast<int>(i);
            if (props[i] == "green") gi = static_cast<int>(i);
            if (props[i] == "blue") bi = static_cast<int>(i);
        }
        if (xi < 0 || yi < 0 || zi < 0) throw IoError("PLY lacks x/y/z properties: " + path);
        for (Eigen::Index v = 0; v < count; ++v) {
            std::vector<double> vals(props.size());
            for (double& val : vals)
                if (!(in >> val)) throw IoError("truncated PLY vertex data: " + path);
            pts.push_back({vals[xi], vals[yi], vals[zi]});
            if (ri >= 0 && gi >= 0 && bi >= 0)
                rgb.push_back({vals[ri] / 255.0, vals[gi] / 255.0, vals[bi] / 255.0});
        }
    } else {
        std::string line;
        while (std::getline(in, line)) {
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            std::istringstream ls(line);
            std::vector<double> vals;
            double v;
            while (ls >> v) vals.push_back(v);
            if (vals.empty()) continue;
            if (vals.size() != 3 && vals.size() != 6 && vals.size() != 9)
                throw IoError("point cloud lines need 3, 6 or 9 columns: " + path);
            pts.push_back({vals[0], vals[1], vals[2]});
            if (vals.size() >= 6) rgb.push_back({vals[3], vals[4], vals[5]});
            if (vals.size() == 9) sig.push_back({vals[6], vals[7], vals[8]});
        }
    }

    if (pts.empty()) throw IoError("empty point cloud: " + path);
    if (!rgb.empty() && rgb.size() != pts.size())
        throw IoError("mixed color/no-color rows in " + path);
    if (!sig.empty() && sig.size() != pts.size())
        throw IoError("mixed sigma/no-sigma rows in " + path);

    cloud.points.resize(static_cast<Eigen::Index>(pts.size()), 3);
    for (size_t i = 0; i < pts.size(); ++i)
        cloud.points.row(static_cast<Eigen::Index>(i)) << pts[i][0], pts[i][1], pts[i][2];
    if (!rgb.empty()) {
        Eigen::MatrixXd f(static_cast<Eigen::Index>(rgb.size()), 3);
        for (size_t i = 0; i < rgb.size(); ++i)
            f.row(static_cast<Eigen::Index>(i)) << rgb[i][0], rgb[i][1], rgb[i][2];
        cloud.features = std::move(f);
    }
    if (!sig.empty()) {
        PointMatrix s(static_cast<Eigen::Index>(sig.size()), 3);
        for (size_t i = 0; i < sig.size(); ++i)
            s.row(static_cast<Eigen::Index>(i)) << sig[i][0], sig[i][1], sig[i][2];
        cloud.input_variance = std::move(s);
    }
    return cloud;
}

void write_point_cloud(const std::string& path, const PointCloud& cloud) {
    std::ofstream out = open_out(path);
    out.precision(17);
    for (Eigen::Index i = 0; i < cloud.points.rows(); ++i) {
        out << cloud.points(i, 0) << ' ' << cloud.points(i, 1) << ' ' << cloud.points(i, 2);
        if (cloud.features && cloud.features->cols() >= 3)
            out << ' ' << (*cloud.features)(i, 0) << ' ' << (*cloud.features)(i, 1) << ' '
                << (*cloud.features)(i, 2);
        if (cloud.input_variance)
            out << ' ' << (*cloud.input_variance)(i, 0) << ' ' << (*cloud.input_variance)(i, 1)
                << ' ' << (*cloud.input_variance)(i, 2);
        out << '\n';
    }
}

void write_ppm(const std::string& path, const Eigen::MatrixXd& r, const Eigen::MatrixXd& g,
               const Eigen::MatrixXd& b) {
    std::ofstream out = open_out(path, std::ios::binary);
    const int h = static_cast<int>(r.rows());
    const int w = static_cast<int>(r.cols());
    out << "P6\n" << w << ' ' << h << "\n255\n";
    auto quant = [](double v) {
        return static_cast<unsigned char>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
    };
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const unsigned char px[3] = {quant(r(y, x)), quant(g(y, x)), quant(b(y, x))};
            out.write(reinterpret_cast<const char*>(px), 3);
        }
    }
}

void read_ppm(const std::string& path, Eigen::MatrixXd& r, Eigen::MatrixXd& g,
              Eigen::MatrixXd& b) {
    std::ifstream in = open_in(path, std::ios::binary);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P6" || maxval != 255) throw IoError("unsupported PPM: " + path);
    in.get();
    r.resize(h, w);
    g.resize(h, w);
    b.resize(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            unsigned char px[3];
            in.read(reinterpret_cast<char*>(px), 3);
            if (!in) throw IoError("truncated PPM: " + path);
            r(y, x) = px[0] / 255.0;
            g(y, x) = px[1] / 255.0;
            b(y, x) = px[2] / 255.0;
        }
    }
}

void write_pfm(const std::string& path, const Eigen::MatrixXd& values) {
    std::ofstream out = open_out(path, std::ios::binary);
    const int h = static_cast<int>(values.rows());
    const int w = static_cast<int>(values.cols());
    out << "Pf\n" << w << ' ' << h << "\n-1.0\n";  // negative scale: little endian
    for (int y = h - 1; y >= 0; --y) {            // PFM rows run bottom-up
        for (int x = 0; x < w; ++x) {
            const float v = static_cast<float>(values(y, x));
            out.write(reinterpret_cast<const char*>(&v), sizeof(float));
        }
    }
}

Eigen::MatrixXd read_pfm(const std::string& path) {
    std::ifstream in = open_in(path, std::ios::binary);
    std::string magic;
    int w = 0, h = 0;
    double scale = 0.0;
    in >> magic >> w >> h >> scale;
    if (magic != "Pf" || scale >= 0.0) throw IoError("unsupported PFM: " + path);
    in.get();
    Eigen::MatrixXd values(h, w);
    for (int y = h - 1; y >= 0; --y) {
        for (int x = 0; x < w; ++x) {
            float v;
            in.read(reinterpret_cast<char*>(&v), sizeof(float));
            if (!in) throw IoError("truncated PFM: " + path);
            values(y, x) = v;
        }
    }
    return values;
}

void write_render(const std::string& prefix, const RenderedImage& image) {
    write_ppm(prefix + "_color.ppm", image.color_r, image.color_g, image.color_b);
    write_pfm(prefix + "_depth.pfm", image.depth);
    write_pfm(prefix + "_depth_var.pfm", image.depth_var);
    write_pfm(prefix + "_color_var.pfm", image.color_var);
}

void save_model(const std::string& path, const GpdfModel& model) {
    json j;
    j["kernel"] = {{"kind", to_string(model.kernel().kind)},
                   {"length_scale", model.kernel().length_scale},
                   {"alpha", model.kernel().alpha}};
    j["noise"] = {{"mode", model.noise().mode == NoiseMode::ScalarObservation ? "scalar" : "noisy_input"},
                  {"sigma_y2", model.noise().sigma_y2},
                  {"sigma_x", vec3_to_json(model.noise().sigma_x)},
                  {"refit_iterations", model.noise().refit_iterations}};
    j["points"] = matrix_to_json(model.points());
    json diag = json::array();
    for (Eigen::Index i = 0; i < model.noise_diagonal().size(); ++i)
        diag.push_back(model.noise_diagonal()(i));
    j["noise_diagonal"] = std::move(diag);
    if (model.feature_table()) j["features"] = matrix_to_json(*model.feature_table());
    if (model.input_variance()) j["input_variance"] = matrix_to_json(*model.input_variance());
    open_out(path) << j.dump(1) << '\n';
}

GpdfModel load_model(const std::string& path) {
    json j;
    try {
        open_in(path) >> j;
    } catch (const json::exception& e) {
        throw IoError("invalid model JSON in " + path + ": " + e.what());
    }
    KernelConfig kernel;
    kernel.kind = kernel_kind_from_string(j.at("kernel").at("kind").get<std::string>());
    kernel.length_scale = j.at("kernel").at("length_scale").get<double>();
    kernel.alpha = j.at("kernel").at("alpha").get<double>();
    NoiseModel noise;
    const std::string mode = j.at("noise").at("mode").get<std::string>();
    noise.mode = mode == "scalar" ? NoiseMode::ScalarObservation : NoiseMode::NoisyInput;
    noise.sigma_y2 = j.at("noise").at("sigma_y2").get<double>();
    noise.sigma_x = vec3_from_json(j.at("noise").at("sigma_x"));
    noise.refit_iterations = j.at("noise").at("refit_iterations").get<int>();

    Eigen::MatrixXd pts = matrix_from_json(j.at("points"));
    const json& diag = j.at("noise_diagonal");
    Eigen::VectorXd d(static_cast<Eigen::Index>(diag.size()));
    for (Eigen::Index i = 0; i < d.size(); ++i) d(i) = diag[i].get<double>();

    std::optional<Eigen::MatrixXd> features;
    if (j.contains("features")) features = matrix_from_json(j.at("features"));
    std::optional<PointMatrix> input_variance;
    if (j.contains("input_variance")) {
        Eigen::MatrixXd iv = matrix_from_json(j.at("input_variance"));
        input_variance = PointMatrix(iv);
    }
    return GpdfModel::from_parts(PointMatrix(pts), kernel, noise, std::move(d),
                                 std::move(features), std::move(input_variance));
}

ViewManifest read_view_manifest(const std::string& path) {
    json j;
    try {
        open_in(path) >> j;
    } catch (const json::exception& e) {
        throw IoError("invalid manifest JSON in " + path + ": " + e.what());
    }
    ViewManifest manifest;
    manifest.intrinsics = camera_from_json(j.at("intrinsics"));
    for (const json& v : j.at("views")) {
        ViewManifest::Entry entry;
        const CameraModel cam = camera_from_json(v.contains("pose") ? [&] {
            json merged = j.at("intrinsics");
            merged.update(v.at("pose"));
            return merged;
        }() : j.at("intrinsics"));
        entry.rotation = cam.rotation;
        entry.translation = cam.translation;
        entry.color_path = v.value("color_image", "");
        entry.depth_path = v.value("depth_image", "");
        manifest.views.push_back(std::move(entry));
    }
    return manifest;
}

void write_view_manifest(const std::string& path, const ViewManifest& manifest) {
    json j;
    j["intrinsics"] = camera_to_json(manifest.intrinsics);
    json views = json::array();
    for (const auto& entry : manifest.views) {
        json v;
        json rot = json::array();
        for (int i = 0; i < 3; ++i)
            for (int c = 0; c < 3; ++c) rot.push_back(entry.rotation(i, c));
        v["pose"] = {{"rotation", std::move(rot)}, {"translation", vec3_to_json(entry.translation)}};
        if (!entry.color_path.empty()) v["color_image"] = entry.color_path;
        if (!entry.depth_path.empty()) v["depth_image"] = entry.depth_path;
        views.push_back(std::move(v));
    }
    j["views"] = std::move(views);
    open_out(path) << j.dump(1) << '\n';
}

std::vector<ReferenceView> load_reference_views(const ViewManifest& manifest,
                                                const std::string& base_dir) {
    std::vector<ReferenceView> views;
    const std::string prefix = base_dir.empty() ? "" : base_dir + "/";
    for (const auto& entry : manifest.views) {
        ReferenceView view;
        view.camera = manifest.intrinsics;
        view.camera.rotation = entry.rotation;
        view.camera.translation = entry.translation;
        if (!entry.color_path.empty()) {
            Eigen::MatrixXd r, g, b;
            read_ppm(prefix + entry.color_path, r, g, b);
            view.color_r = std::move(r);
            view.color_g = std::move(g);
            view.color_b = std::move(b);
        }
        if (!entry.depth_path.empty()) view.depth = read_pfm(prefix + entry.depth_path);
        views.push_back(std::move(view));
    }
    return views;
}

namespace {

AnalyticScene scene_from_json(const json& j) {
    AnalyticScene scene;
    check_no_unknown_keys(j, {"primitives", "workspace_box"}, "scene");
    for (const json& p : j.at("primitives")) {
        check_no_unknown_keys(
            p, {"type", "center", "radius", "half_extents", "a", "b", "color", "material",
                "extra_noise"},
            "primitive");
        Primitive prim;
        const std::string type = p.at("type").get<std::string>();
        if (type == "sphere") {
            prim.kind = PrimitiveKind::Sphere;
            prim.center = vec3_from_json(p.at("center"));
            prim.radius = p.at("radius").get<double>();
        } else if (type == "box") {
            prim.kind = PrimitiveKind::Box;
            prim.center = vec3_from_json(p.at("center"));
            prim.half_extents = vec3_from_json(p.at("half_extents"));
        } else if (type == "capsule") {
            prim.kind = PrimitiveKind::Capsule;
            prim.cap_a = vec3_from_json(p.at("a"));
            prim.cap_b = vec3_from_json(p.at("b"));
            prim.radius = p.at("radius").get<double>();
        } else {
            throw ValidationError("unknown primitive type: " + type);
        }
        if (p.contains("color")) prim.color = vec3_from_json(p.at("color"));
        prim.material = p.value("material", "default");
        prim.extra_noise = p.value("extra_noise", 1.0);
        scene.primitives.push_back(std::move(prim));
    }
    if (j.contains("workspace_box")) {
        scene.workspace_lo = vec3_from_json(j.at("workspace_box").at("min"));
        scene.workspace_hi = vec3_from_json(j.at("workspace_box").at("max"));
    }
    scene.validate();
    return scene;
}

}  // namespace

AnalyticScene read_scene(const std::string& path) {
    json j;
    try {
        open_in(path) >> j;
    } catch (const json::exception& e) {
        throw IoError("invalid scene JSON in " + path + ": " + e.what());
    }
    return scene_from_json(j);
}

namespace {

json scene_to_json(const AnalyticScene& scene) {
    json j;
    json prims = json::array();
    for (const Primitive& p : scene.primitives) {
        json e;
        switch (p.kind) {
            case PrimitiveKind::Sphere:
                e["type"] = "sphere";
                e["center"] = vec3_to_json(p.center);
                e["radius"] = p.radius;
                break;
            case PrimitiveKind::Box:
                e["type"] = "box";
                e["center"] = vec3_to_json(p.center);
                e["half_extents"] = vec3_to_json(p.half_extents);
                break;
            case PrimitiveKind::Capsule:
                e["type"] = "capsule";
                e["a"] = vec3_to_json(p.cap_a);
                e["b"] = vec3_to_json(p.cap_b);
                e["radius"] = p.radius;
                break;
        }
        e["color"] = vec3_to_json(p.color);
        e["material"] = p.material;
        if (p.extra_noise != 1.0) e["extra_noise"] = p.extra_noise;
        prims.push_back(std::move(e));
    }
    j["primitives"] = std::move(prims);
    j["workspace_box"] = {{"min", vec3_to_json(scene.workspace_lo)},
                          {"max", vec3_to_json(scene.workspace_hi)}};
    return j;
}

}  // namespace

void write_scene(const std::string& path, const AnalyticScene& scene) {
    open_out(path) << scene_to_json(scene).dump(1) << '\n';
}

ExplorationConfig read_exploration_config(const std::string& path) {
    json j;
    try {
        open_in(path) >> j;
    } catch (const json::exception& e) {
        throw IoError("invalid config JSON in " + path + ": " + e.what());
    }
    check_no_unknown_keys(j,
                          {"scene", "intrinsics", "initial_pose", "candidates", "thresholds",
                           "budgets", "noise_coeff", "seed", "length_scale", "voxel_size",
                           "ensemble_scales", "render_samples", "touch_input_variance",
                           "snapshot_dir"},
                          "exploration config");
    ExplorationConfig config;
    if (j.at("scene").is_string()) {
        config.scene = read_scene(j.at("scene").get<std::string>());
    } else {
        config.scene = scene_from_json(j.at("scene"));
    }
    config.intrinsics = camera_from_json(j.at("intrinsics"));
    {
        json merged = j.at("intrinsics");
        merged.update(j.at("initial_pose"));
        config.initial_pose = camera_from_json(merged);
    }
    for (const json& c : j.at("candidates")) {
        json merged = j.at("intrinsics");
        merged.update(c);
        config.candidate_poses.push_back(camera_from_json(merged));
    }
    if (j.contains("thresholds")) {
        config.ig_stop = j.at("thresholds").value("ig_stop", config.ig_stop);
        config.var_stop = j.at("thresholds").value("var_stop", config.var_stop);
    }
    if (j.contains("budgets")) {
        config.max_views = j.at("budgets").value("views", config.max_views);
        config.max_touches = j.at("budgets").value("touches", config.max_touches);
    }
    config.noise_coeff = j.value("noise_coeff", config.noise_coeff);
    config.seed = j.value("seed", config.seed);
    config.length_scale = j.value("length_scale", config.length_scale);
    config.voxel_size = j.value("voxel_size", config.voxel_size);
    if (j.contains("ensemble_scales"))
        config.ensemble_scales = j.at("ensemble_scales").get<std::vector<double>>();
    config.render_samples = j.value("render_samples", config.render_samples);
    config.touch_input_variance = j.value("touch_input_variance", config.touch_input_variance);
    config.snapshot_dir = j.value("snapshot_dir", config.snapshot_dir);
    return config;
}

void write_exploration_config(const std::string& path, const ExplorationConfig& config) {
    json j;
    j["scene"] = scene_to_json(config.scene);
    j["intrinsics"] = camera_to_json(config.intrinsics);
    j["initial_pose"] = camera_to_json(config.initial_pose);
    json cands = json::array();
    for (const CameraModel& c : config.candidate_poses) cands.push_back(camera_to_json(c));
    j["candidates"] = std::move(cands);
    j["thresholds"] = {{"ig_stop", config.ig_stop}, {"var_stop", config.var_stop}};
    j["budgets"] = {{"views", config.max_views}, {"touches", config.max_touches}};
    j["noise_coeff"] = config.noise_coeff;
    j["seed"] = config.seed;
    j["length_scale"] = config.length_scale;
    j["voxel_size"] = config.voxel_size;
    j["ensemble_scales"] = config.ensemble_scales;
    j["render_samples"] = config.render_samples;
    j["touch_input_variance"] = config.touch_input_variance;
    if (!config.snapshot_dir.empty()) j["snapshot_dir"] = config.snapshot_dir;
    open_out(path) << j.dump(1) << '\n';
}

std::string metrics_to_jsonl(const std::vector<ExplorationStepLog>& log) {
    std::ostringstream out;
    for (const ExplorationStepLog& entry : log) {
        json j;
        j["step"] = entry.step;
        j["phase"] = entry.phase;
        j["chosen"] = vec3_to_json(entry.chosen);
        j["max_ig"] = entry.max_ig;
        j["max_surface_var"] = entry.max_surface_var;
        out << j.dump() << '\n';
    }
    return out.str();
}

void write_metrics(const std::string& path, const std::vector<ExplorationStepLog>& log) {
    open_out(path) << metrics_to_jsonl(log);
}

}  // namespace gpdf
