// Command-line driver: synthetic scene generation, lifting, rendering,
// evaluation, gradient checking, benchmarks, and the k sweep.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bevsplat/config.hpp"
#include "bevsplat/gradients.hpp"
#include "bevsplat/harness.hpp"
#include "bevsplat/multiscale.hpp"
#include "bevsplat/parallel.hpp"
#include "bevsplat/tensor_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bevsplat;

namespace {

RunConfig config_from_path(const std::string& path) {
    if (path.empty()) return parse_config("{}");
    return load_config(path);
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    json j;
    in >> j;
    return j;
}

SceneSpec scene_spec_from_config(const std::string& config_path, const RunConfig&) {
    SceneSpec spec = SceneSpec::standard_five_box_scene();
    if (config_path.empty()) return spec;
    const json j = read_json_file(config_path);
    if (!j.contains("scene")) return spec;
    const json& s = j["scene"];
    if (s.contains("depth_noise_sigma")) spec.depth_noise_sigma = s["depth_noise_sigma"];
    if (s.contains("seed")) spec.seed = s["seed"];
    if (s.contains("feature_mode"))
        spec.feature_mode = s["feature_mode"] == "random" ? FeatureMode::random
                                                          : FeatureMode::onehot_class;
    if (s.contains("boxes")) {
        spec.boxes.clear();
        for (const auto& b : s["boxes"]) {
            Box box;
            box.center = {b["center"][0], b["center"][1], b["center"][2]};
            box.size = {b["size"][0], b["size"][1], b["size"][2]};
            box.yaw = b.value("yaw", 0.0);
            spec.boxes.push_back(box);
        }
    }
    if (s.contains("ring")) {
        const json& r = s["ring"];
        spec.cameras = make_camera_ring(
            r.value("count", 6), r.value("hfov_deg", 70.0), r.value("height", 2.4),
            r.value("pitch_deg", 10.0), r.value("image_height", 80), r.value("image_width", 144));
    }
    return spec;
}

json camera_to_json(const CameraModel& cam) {
    json j;
    std::vector<double> intr, extr;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) intr.push_back(cam.intrinsics(r, c));
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) extr.push_back(cam.extrinsics(r, c));
    j["intrinsics"] = intr;
    j["extrinsics"] = extr;
    j["image_height"] = cam.image_height;
    j["image_width"] = cam.image_width;
    return j;
}

CameraModel camera_from_json(const json& j) {
    Mat3 intr;
    Mat4 extr;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) intr(r, c) = j["intrinsics"][static_cast<std::size_t>(r * 3 + c)];
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) extr(r, c) = j["extrinsics"][static_cast<std::size_t>(r * 4 + c)];
    return CameraModel(intr, extr, j["image_height"], j["image_width"]);
}

json report_to_json(const EvalReport& r) {
    json j;
    j["iou"] = r.iou;
    j["threshold"] = r.threshold;
    j["retained_fraction"] = r.retained_fraction;
    j["distance_band_iou"] = json::array();
    for (const auto& [dist, iou] : r.distance_band_iou)
        j["distance_band_iou"].push_back({dist, iou});
    j["timings_ms"] = r.timings_ms;
    return j;
}

int cmd_gen_scene(const std::string& config_path, const std::string& out_dir) {
    const RunConfig config = config_from_path(config_path);
    const SceneSpec spec = scene_spec_from_config(config_path, config);
    const GeneratedScene scene = gen_scene(spec, config);

    fs::create_directories(out_dir);
    json meta;
    meta["depth_noise_sigma"] = spec.depth_noise_sigma;
    meta["feature_mode"] =
        spec.feature_mode == FeatureMode::random ? "random" : "onehot_class";
    meta["seed"] = spec.seed;
    meta["cameras"] = json::array();
    for (const auto& cam : scene.cameras) meta["cameras"].push_back(camera_to_json(cam));
    meta["boxes"] = json::array();
    for (const auto& b : spec.boxes)
        meta["boxes"].push_back({{"center", {b.center.x, b.center.y, b.center.z}},
                                 {"size", {b.size.x, b.size.y, b.size.z}},
                                 {"yaw", b.yaw}});
    std::ofstream(out_dir + "/scene.json") << meta.dump(2) << "\n";

    for (std::size_t i = 0; i < scene.cameras.size(); ++i) {
        const std::string prefix = out_dir + "/cam" + std::to_string(i) + "_";
        write_tensor(scene.depth_logits[i], prefix + "depth_logits.bevt");
        write_tensor(scene.features[i], prefix + "features.bevt");
        write_tensor(scene.opacity_logits[i], prefix + "opacity_logits.bevt");
    }
    write_tensor(scene.gt_bev_mask, out_dir + "/gt_mask.bevt");
    std::cout << "wrote scene with " << scene.cameras.size() << " cameras to " << out_dir << "\n";
    return 0;
}

GeneratedScene load_scene(const std::string& dir) {
    const json meta = read_json_file(dir + "/scene.json");
    GeneratedScene scene;
    for (const auto& cj : meta["cameras"]) scene.cameras.push_back(camera_from_json(cj));
    for (std::size_t i = 0; i < scene.cameras.size(); ++i) {
        const std::string prefix = dir + "/cam" + std::to_string(i) + "_";
        scene.depth_logits.push_back(read_tensor(prefix + "depth_logits.bevt"));
        scene.features.push_back(read_tensor(prefix + "features.bevt"));
        scene.opacity_logits.push_back(read_tensor(prefix + "opacity_logits.bevt"));
    }
    scene.gt_bev_mask = read_tensor(dir + "/gt_mask.bevt");
    return scene;
}

int cmd_lift(const std::string& config_path, const std::string& scene_dir,
             const std::string& out_dir) {
    const RunConfig config = config_from_path(config_path);
    const GeneratedScene scene = load_scene(scene_dir);
    const DepthBinning bins = make_bins(config.depth.d_min, config.depth.d_max, config.depth.bins);

    std::vector<PixelGaussianSet> sets;
    for (std::size_t ci = 0; ci < scene.cameras.size(); ++ci) {
        const DepthDistribution dist = softmax_depth(scene.depth_logits[ci]);
        const Frustum frustum =
            build_frustum(scene.cameras[ci], bins, config.stride, static_cast<int>(ci));
        auto [mu3d, cov3d] = moments_3d(dist, frustum);
        sets.push_back(assemble_gaussians(mu3d, cov3d, scene.opacity_logits[ci],
                                          scene.features[ci], static_cast<int>(ci)));
    }
    const PixelGaussianSet merged = merge_gaussians(sets);
    const FilterResult filtered = filter_opacity(merged, config.opacity_threshold);
    const PixelGaussianSet& g = filtered.retained;

    fs::create_directories(out_dir);
    write_tensor(g.mu3d, out_dir + "/mu3d.bevt");
    write_tensor(g.cov3d, out_dir + "/cov3d.bevt");
    write_tensor(g.opacity, out_dir + "/opacity.bevt");
    write_tensor(g.features, out_dir + "/features.bevt");
    Tensor sources = Tensor::zeros({std::max<std::size_t>(g.size(), 1), 3});
    for (std::size_t i = 0; i < g.size(); ++i) {
        sources.set(i * 3 + 0, g.source[i].camera_index);
        sources.set(i * 3 + 1, g.source[i].row);
        sources.set(i * 3 + 2, g.source[i].col);
    }
    write_tensor(sources, out_dir + "/sources.bevt");
    json meta;
    meta["count"] = g.size();
    meta["channels"] = g.channels();
    meta["retained_fraction"] = filtered.retained_fraction;
    std::ofstream(out_dir + "/gaussians.json") << meta.dump(2) << "\n";
    std::cout << "lifted " << g.size() << " gaussians (retained fraction "
              << filtered.retained_fraction << ") to " << out_dir << "\n";
    return 0;
}

int cmd_render(const std::string& config_path, const std::string& gaussians_dir,
               const std::string& out_dir) {
    const RunConfig config = config_from_path(config_path);
    const json meta = read_json_file(gaussians_dir + "/gaussians.json");

    PixelGaussianSet set;
    set.mu3d = read_tensor(gaussians_dir + "/mu3d.bevt");
    set.cov3d = read_tensor(gaussians_dir + "/cov3d.bevt");
    set.opacity = read_tensor(gaussians_dir + "/opacity.bevt");
    set.features = read_tensor(gaussians_dir + "/features.bevt");
    const Tensor sources = read_tensor(gaussians_dir + "/sources.bevt");
    const std::size_t count = meta["count"];
    set.source.resize(count);
    for (std::size_t i = 0; i < count; ++i)
        set.source[i] = {static_cast<int>(sources.at(i * 3 + 0)),
                         static_cast<int>(sources.at(i * 3 + 1)),
                         static_cast<int>(sources.at(i * 3 + 2))};

    double cutoff = config.k;
    if (config.k_mode == KMode::cov_scale) {
        for (std::size_t i = 0; i < set.size() * 9; ++i)
            set.cov3d.set(i, set.cov3d.at(i) * config.k * config.k);
        cutoff = 3.0;
    }
    const std::vector<BevGrid> grids = make_scale_grids(config.bev, config.scales);
    const std::vector<BevFeatureMap> maps =
        render_multiscale(set, grids, cutoff, config.splat_eps, Dtype::f32);

    fs::create_directories(out_dir);
    std::vector<BevFeatureMap> upsampled;
    for (std::size_t i = 0; i < maps.size(); ++i) {
        write_tensor(maps[i].values,
                     out_dir + "/scale_" + std::to_string(config.scales[i]) + ".bevt");
        upsampled.push_back(upsample(maps[i], config.bev.resolution, config.upsample_mode));
    }
    const BevFeatureMap fused = fuse(upsampled, config.fuse_mode);
    write_tensor(fused.values, out_dir + "/fused.bevt");
    write_tensor(fused.weight, out_dir + "/fused_weight.bevt");

    const std::size_t n = fused.n_rows();
    Tensor channel0 = Tensor::zeros({n, n});
    for (std::size_t i = 0; i < n * n; ++i) channel0.set(i, fused.values.at(i));
    emit_pgm(channel0, out_dir + "/fused_ch0.pgm");
    emit_pgm(fused.weight, out_dir + "/fused_weight.pgm");

    json out_meta;
    out_meta["fuse_mode"] = fuse_mode_name(config.fuse_mode);
    out_meta["fusion_is_linear_standin"] = true;
    out_meta["scales"] = config.scales;
    std::ofstream(out_dir + "/render.json") << out_meta.dump(2) << "\n";
    std::cout << "rendered " << maps.size() << " scales to " << out_dir << "\n";
    return 0;
}

int cmd_eval(const std::string& config_path, const std::string& pred_path,
             const std::string& gt_path, double min_distance) {
    const RunConfig config = config_from_path(config_path);
    const Tensor pred = read_tensor(pred_path);
    const Tensor gt = read_tensor(gt_path);
    const BevGrid grid(config.bev.x_min, config.bev.x_max, config.bev.y_min, config.bev.y_max,
                       static_cast<int>(pred.dim(0)), static_cast<int>(pred.dim(1)));
    json j;
    j["iou"] = compute_iou(pred, gt, grid, min_distance);
    j["min_distance"] = min_distance;
    j["distance_band_iou"] = json::array();
    for (double band : {0.0, 10.0, 20.0, 30.0, 40.0})
        j["distance_band_iou"].push_back({band, compute_iou(pred, gt, grid, band)});
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_grad_check(const std::string& config_path, const std::string& dtype_name,
                   std::uint64_t seed, double h, double threshold, int scenes) {
    const RunConfig config = config_from_path(config_path);
    GradCheckSpec spec;
    spec.k = config.k;
    spec.eps = config.splat_eps;
    spec.dtype = dtype_name == "f32" ? Dtype::f32 : Dtype::f64;
    if (h <= 0.0) h = default_fd_step(spec.dtype);
    if (threshold <= 0.0) threshold = spec.dtype == Dtype::f32 ? 1e-3 : 1e-6;

    json out;
    out["dtype"] = dtype_name;
    out["h"] = h;
    out["threshold"] = threshold;
    out["scenes"] = json::array();
    double worst = 0.0;
    std::size_t excluded = 0;
    for (int s = 0; s < scenes; ++s) {
        spec.seed = seed + static_cast<std::uint64_t>(s);
        const GradCheckReport r = grad_check(spec, h);
        json js;
        auto group = [](const GradGroupReport& g) {
            return json{{"max_rel_err", g.max_rel_err},
                        {"mean_rel_err", g.mean_rel_err},
                        {"entries", g.entries},
                        {"excluded", g.excluded}};
        };
        js["features"] = group(r.features);
        js["opacity_logits"] = group(r.opacity_logits);
        js["depth_logits"] = group(r.depth_logits);
        out["scenes"].push_back(js);
        worst = std::max(worst, r.max_rel_err());
        excluded += r.total_excluded();
    }
    out["max_rel_err"] = worst;
    out["boundary_excluded"] = excluded;
    const bool ok = worst <= threshold;
    out["pass"] = ok;
    std::cout << out.dump(2) << "\n";
    return ok ? 0 : 1;
}

int cmd_bench(const std::string& config_path, std::size_t n) {
    const RunConfig config = config_from_path(config_path);
    const BenchResult r = bench(config, n);
    json j;
    j["n_gaussians"] = r.n_gaussians;
    j["median_ms"] = r.median_ms;
    j["oracle_ms"] = r.oracle_ms;
    j["tiled_render_ms"] = r.tiled_render_ms;
    j["speedup"] = r.speedup;
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_sweep_k(const std::string& config_path, const std::string& ks_csv) {
    RunConfig config = config_from_path(config_path);
    SceneSpec spec = scene_spec_from_config(config_path, config);
    if (spec.depth_noise_sigma <= 0.0) spec.depth_noise_sigma = 2.0;
    const GeneratedScene scene = gen_scene(spec, config);

    std::vector<double> ks;
    std::stringstream ss(ks_csv);
    std::string item;
    while (std::getline(ss, item, ',')) ks.push_back(std::stod(item));
    if (ks.empty()) throw std::runtime_error("sweep-k: no k values given");

    json j = json::array();
    for (double k : ks) {
        config.k = k;
        const PipelineResult result = run_pipeline(config, scene);
        j.push_back({k, result.report.iou});
    }
    std::cout << j.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-camera depth-uncertainty lifting and BEV Gaussian splatting"};
    app.require_subcommand(1);

    int threads = 0;
    app.add_option("--threads", threads, "cap worker threads (0 = auto / BEVSPLAT_THREADS)");

    std::string config_path, out_dir, scene_dir, gaussians_dir, pred_path, gt_path;
    std::string dtype_name = "f64", ks_csv = "0.25,0.5,0.75,1.0,1.25,1.5,2.0,4.0";
    double min_distance = 0.0, h = 0.0, threshold = 0.0;
    std::uint64_t seed = 1;
    std::size_t bench_n = 100000;
    int scenes = 3;

    auto* gs = app.add_subcommand("gen-scene", "write synthetic per-camera tensors + scene.json");
    gs->add_option("--config", config_path, "run configuration JSON");
    gs->add_option("--out", out_dir, "output directory")->required();

    auto* lf = app.add_subcommand("lift", "lift a scene into 3D gaussians");
    lf->add_option("--config", config_path, "run configuration JSON");
    lf->add_option("--scene", scene_dir, "scene directory from gen-scene")->required();
    lf->add_option("--out", out_dir, "output directory")->required();

    auto* rd = app.add_subcommand("render", "splat lifted gaussians onto BEV grids");
    rd->add_option("--config", config_path, "run configuration JSON");
    rd->add_option("--gaussians", gaussians_dir, "directory from lift")->required();
    rd->add_option("--out", out_dir, "output directory")->required();

    auto* ev = app.add_subcommand("eval", "IoU between two binary BEVT masks");
    ev->add_option("--config", config_path, "run configuration JSON");
    ev->add_option("--pred", pred_path, "prediction mask BEVT")->required();
    ev->add_option("--gt", gt_path, "ground-truth mask BEVT")->required();
    ev->add_option("--min-distance", min_distance, "exclude cells nearer than this (m)");

    auto* gc = app.add_subcommand("grad-check", "finite-difference gradient verification");
    gc->add_option("--config", config_path, "run configuration JSON");
    gc->add_option("--dtype", dtype_name, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
    gc->add_option("--seed", seed, "scene seed");
    gc->add_option("--fd-step", h, "relative FD step (default per dtype)");
    gc->add_option("--threshold", threshold, "max rel-err to pass (default per dtype)");
    gc->add_option("--scenes", scenes, "number of random scenes");

    auto* bn = app.add_subcommand("bench", "stage timing table");
    bn->add_option("--config", config_path, "run configuration JSON");
    bn->add_option("--n", bench_n, "gaussian count");

    auto* sk = app.add_subcommand("sweep-k", "IoU as a function of the error tolerance k");
    sk->add_option("--config", config_path, "run configuration JSON");
    sk->add_option("--ks", ks_csv, "comma-separated k values");

    CLI11_PARSE(app, argc, argv);
    if (threads > 0) set_thread_cap(threads);

    try {
        if (gs->parsed()) return cmd_gen_scene(config_path, out_dir);
        if (lf->parsed()) return cmd_lift(config_path, scene_dir, out_dir);
        if (rd->parsed()) return cmd_render(config_path, gaussians_dir, out_dir);
        if (ev->parsed()) return cmd_eval(config_path, pred_path, gt_path, min_distance);
        if (gc->parsed())
            return cmd_grad_check(config_path, dtype_name, seed, h, threshold, scenes);
        if (bn->parsed()) return cmd_bench(config_path, bench_n);
        if (sk->parsed()) return cmd_sweep_k(config_path, ks_csv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
