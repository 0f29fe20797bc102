#include "bevsplat/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "bevsplat/multiscale.hpp"
#include "bevsplat/rng.hpp"

namespace bevsplat {

namespace {

constexpr double kHotLogit = 16.0;   // one-hot encoding strength for zero-noise depth
constexpr double kBoxLogit = 4.0;    // opacity logit on box pixels
constexpr double kBgLogit = -4.0;    // opacity logit on background pixels

double deg(double d) { return d * M_PI / 180.0; }

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

/// First positive ray parameter hitting the box, or +inf. The ray direction
/// is scaled so the parameter equals planar depth.
double ray_box_hit(const Vec3& origin, const Vec3& dir, const Box& box) {
    const Mat3 to_box = rotation_z(-box.yaw);
    const Vec3 o = to_box * (origin - box.center);
    const Vec3 d = to_box * dir;
    double t_near = -std::numeric_limits<double>::infinity();
    double t_far = std::numeric_limits<double>::infinity();
    const double half[3] = {0.5 * box.size.x, 0.5 * box.size.y, 0.5 * box.size.z};
    const double od[3] = {o.x, o.y, o.z};
    const double dd[3] = {d.x, d.y, d.z};
    for (int a = 0; a < 3; ++a) {
        if (dd[a] == 0.0) {
            if (std::abs(od[a]) > half[a]) return std::numeric_limits<double>::infinity();
            continue;
        }
        double t0 = (-half[a] - od[a]) / dd[a];
        double t1 = (half[a] - od[a]) / dd[a];
        if (t0 > t1) std::swap(t0, t1);
        t_near = std::max(t_near, t0);
        t_far = std::min(t_far, t1);
    }
    if (t_near > t_far || t_far <= 0.0) return std::numeric_limits<double>::infinity();
    return t_near > 0.0 ? t_near : t_far;
}

bool point_in_footprint(double x, double y, const Box& box) {
    const double c = std::cos(-box.yaw), s = std::sin(-box.yaw);
    const double dx = x - box.center.x;
    const double dy = y - box.center.y;
    const double bx = c * dx - s * dy;
    const double by = s * dx + c * dy;
    return std::abs(bx) <= 0.5 * box.size.x && std::abs(by) <= 0.5 * box.size.y;
}

}  // namespace

std::vector<CameraModel> make_camera_ring(int count, double hfov_deg, double height,
                                          double pitch_deg, int image_height, int image_width) {
    // Camera axes in ego coordinates at yaw 0, pitch 0: z forward (+ego x),
    // x right (-ego y), y down (-ego z).
    Mat3 base;
    base(0, 2) = 1.0;
    base(1, 0) = -1.0;
    base(2, 1) = -1.0;

    Mat3 intr = Mat3::identity();
    const double fx = (image_width / 2.0) / std::tan(deg(hfov_deg) / 2.0);
    intr(0, 0) = fx;
    intr(1, 1) = fx;
    intr(0, 2) = image_width / 2.0;
    intr(1, 2) = image_height / 2.0;

    std::vector<CameraModel> cams;
    cams.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const double yaw = deg(360.0 * i / count);
        // Ry(pitch) tips the forward axis downward before the yaw is applied.
        Mat3 pitch = Mat3::identity();
        const double cp = std::cos(deg(pitch_deg)), sp = std::sin(deg(pitch_deg));
        pitch(0, 0) = cp;
        pitch(0, 2) = sp;
        pitch(2, 0) = -sp;
        pitch(2, 2) = cp;
        const Mat3 cam_to_ego = rotation_z(yaw) * pitch * base;
        const Vec3 pos{0.0, 0.0, height};
        const Mat3 ego_to_cam = cam_to_ego.transposed();
        const Mat4 extr = Mat4::from_rt(ego_to_cam, (ego_to_cam * pos) * -1.0);
        cams.emplace_back(intr, extr, image_height, image_width);
    }
    return cams;
}

SceneSpec SceneSpec::standard_five_box_scene(double depth_noise_sigma) {
    SceneSpec s;
    s.cameras = make_camera_ring();
    s.depth_noise_sigma = depth_noise_sigma;
    s.boxes = {
        {{11.0, 0.5, 0.6}, {12.0, 6.0, 1.2}, 0.3},
        {{0.5, 12.0, 0.6}, {10.0, 5.0, 1.2}, -0.5},
        {{-12.0, 4.0, 0.6}, {11.0, 6.0, 1.2}, 0.9},
        {{-6.0, -12.0, 0.6}, {10.0, 6.0, 1.2}, -0.2},
        {{9.0, -11.0, 0.6}, {12.0, 5.0, 1.2}, 1.2},
    };
    return s;
}

GeneratedScene gen_scene(const SceneSpec& spec, const RunConfig& config) {
    if (spec.cameras.empty()) throw std::invalid_argument("gen_scene: no cameras");
    for (const Box& box : spec.boxes)
        if (box.center.x < config.bev.x_min || box.center.x > config.bev.x_max ||
            box.center.y < config.bev.y_min || box.center.y > config.bev.y_max)
            throw std::invalid_argument("gen_scene: box center outside the BEV extent");
    const DepthBinning bins = make_bins(config.depth.d_min, config.depth.d_max, config.depth.bins);
    const std::size_t n_bins = bins.values.size();
    const int stride = config.stride;
    Rng rng(spec.seed);

    const std::size_t channels =
        spec.feature_mode == FeatureMode::onehot_class ? 2 : 8;

    GeneratedScene out;
    out.cameras = spec.cameras;
    std::vector<bool> box_seen(spec.boxes.size(), false);

    for (std::size_t ci = 0; ci < spec.cameras.size(); ++ci) {
        const CameraModel& cam = spec.cameras[ci];
        const std::size_t rows = static_cast<std::size_t>(cam.image_height / stride);
        const std::size_t cols = static_cast<std::size_t>(cam.image_width / stride);

        Tensor depth_logits = Tensor::zeros({n_bins, rows, cols});
        Tensor features = Tensor::zeros({channels, rows, cols});
        Tensor opacity = Tensor::zeros({rows, cols});

        const Mat3 k_inv = cam.intrinsics.inverse();
        const Mat4 cam_to_ego = cam.extrinsics.rigid_inverse();
        const Mat3 rot = cam_to_ego.rotation();
        const Vec3 origin = cam_to_ego.translation();
        const std::size_t pixels = rows * cols;

        for (std::size_t p = 0; p < pixels; ++p) {
            const std::size_t i = p / cols;
            const std::size_t j = p % cols;
            const double u = (static_cast<double>(j) + 0.5) * stride;
            const double v = (static_cast<double>(i) + 0.5) * stride;
            const Vec3 dir = rot * (k_inv * Vec3{u, v, 1.0});

            double d_gt = bins.d_max;
            bool hit = false;
            for (std::size_t bi = 0; bi < spec.boxes.size(); ++bi) {
                const double t = ray_box_hit(origin, dir, spec.boxes[bi]);
                if (t < d_gt && t >= bins.d_min * 0.5) {
                    d_gt = t;
                    hit = true;
                    box_seen[bi] = true;
                }
            }

            if (spec.depth_noise_sigma > 0.0) {
                const double inv_two_var =
                    1.0 / (2.0 * spec.depth_noise_sigma * spec.depth_noise_sigma);
                for (std::size_t b = 0; b < n_bins; ++b) {
                    const double d = bins.values[b] - d_gt;
                    depth_logits.set(b * pixels + p, -d * d * inv_two_var);
                }
            } else {
                std::size_t nearest = 0;
                double best = std::numeric_limits<double>::infinity();
                for (std::size_t b = 0; b < n_bins; ++b) {
                    const double d = std::abs(bins.values[b] - d_gt);
                    if (d < best) {
                        best = d;
                        nearest = b;
                    }
                }
                depth_logits.set(nearest * pixels + p, kHotLogit);
            }

            opacity.set(p, hit ? kBoxLogit : kBgLogit);
            if (spec.feature_mode == FeatureMode::onehot_class) {
                features.set((hit ? 0 : 1) * pixels + p, 1.0);
            } else {
                for (std::size_t c = 0; c < channels; ++c)
                    features.set(c * pixels + p, rng.normal());
            }
        }

        out.depth_logits.push_back(std::move(depth_logits));
        out.features.push_back(std::move(features));
        out.opacity_logits.push_back(std::move(opacity));
    }

    for (std::size_t bi = 0; bi < spec.boxes.size(); ++bi)
        if (!box_seen[bi])
            std::fprintf(stderr, "warning: box %zu is outside every camera view\n", bi);

    const std::size_t n = static_cast<std::size_t>(config.bev.resolution);
    const BevGrid grid(config.bev.x_min, config.bev.x_max, config.bev.y_min, config.bev.y_max,
                       config.bev.resolution, config.bev.resolution);
    out.gt_bev_mask = Tensor::zeros({n, n});
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) {
            const Vec2 center = grid.cell_center_meters(static_cast<int>(r), static_cast<int>(c));
            for (const Box& box : spec.boxes)
                if (point_in_footprint(center.x, center.y, box)) {
                    out.gt_bev_mask.set(r * n + c, 1.0);
                    break;
                }
        }
    return out;
}

double compute_iou(const Tensor& pred, const Tensor& gt, const BevGrid& grid,
                   double min_distance) {
    if (pred.dims() != gt.dims()) throw std::invalid_argument("compute_iou: shape mismatch");
    if (min_distance < 0.0) throw std::invalid_argument("compute_iou: min_distance must be >= 0");
    const std::size_t rows = pred.dim(0);
    const std::size_t cols = pred.dim(1);
    std::size_t inter = 0, uni = 0;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            const Vec2 center = grid.cell_center_meters(static_cast<int>(r), static_cast<int>(c));
            if (std::hypot(center.x, center.y) < min_distance) continue;
            const bool p = pred.at(r * cols + c) != 0.0;
            const bool g = gt.at(r * cols + c) != 0.0;
            inter += p && g;
            uni += p || g;
        }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

struct ThresholdPick {
    double threshold = 0.0;
    double iou = 0.0;
    Tensor mask;
};

/// Sweeps prediction cuts over the response plane and keeps the IoU-best one.
/// Cells sharing a response value enter or leave the prediction together; the
/// bottom value group is never predicted, so an all-constant response (e.g.
/// an empty render) yields the empty mask and IoU 0.
ThresholdPick best_threshold_mask(const Tensor& response, const Tensor& gt) {
    const std::size_t n = response.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return response.at(a) > response.at(b);
    });
    std::size_t gt_count = 0;
    for (std::size_t i = 0; i < n; ++i) gt_count += gt.at(i) != 0.0;

    // The empty prediction is always a candidate; with an empty ground truth
    // it scores 1 by the empty-union convention.
    double best_iou = gt_count == 0 ? 1.0 : 0.0;
    double best_threshold = std::numeric_limits<double>::infinity();
    std::size_t best_take = 0;
    std::size_t inter = 0;
    std::size_t taken = 0;
    while (taken < n) {
        const double value = response.at(order[taken]);
        std::size_t end = taken;
        while (end < n && response.at(order[end]) == value) {
            inter += gt.at(order[end]) != 0.0;
            ++end;
        }
        taken = end;
        if (taken == n) break;  // prediction must exceed the background level
        const double iou = gt_count + taken - inter == 0
                               ? 1.0
                               : static_cast<double>(inter) /
                                     static_cast<double>(gt_count + taken - inter);
        if (iou > best_iou) {
            best_iou = iou;
            best_threshold = value;
            best_take = taken;
        }
    }

    ThresholdPick pick;
    pick.threshold = best_threshold;
    pick.iou = best_iou;
    pick.mask = Tensor::zeros(gt.dims());
    for (std::size_t i = 0; i < best_take; ++i) pick.mask.set(order[i], 1.0);
    return pick;
}

}  // namespace

PipelineResult run_pipeline(const RunConfig& config, const GeneratedScene& scene) {
    const DepthBinning bins = make_bins(config.depth.d_min, config.depth.d_max, config.depth.bins);
    PipelineResult result;
    EvalReport& report = result.report;

    auto t0 = Clock::now();
    std::vector<PixelGaussianSet> sets;
    sets.reserve(scene.cameras.size());
    for (std::size_t ci = 0; ci < scene.cameras.size(); ++ci) {
        const DepthDistribution dist = softmax_depth(scene.depth_logits[ci]);
        const Frustum frustum =
            build_frustum(scene.cameras[ci], bins, config.stride, static_cast<int>(ci));
        auto [mu3d, cov3d] = moments_3d(dist, frustum);
        sets.push_back(assemble_gaussians(mu3d, cov3d, scene.opacity_logits[ci],
                                          scene.features[ci], static_cast<int>(ci)));
    }
    PixelGaussianSet merged = merge_gaussians(sets);
    FilterResult filtered = filter_opacity(merged, config.opacity_threshold);
    report.retained_fraction = filtered.retained_fraction;
    result.gaussians = std::move(filtered.retained);
    report.timings_ms["lift"] = ms_since(t0);

    // k_mode cov_scale widens the covariance by k^2 and truncates at a fixed
    // 3-sigma radius instead of cutting the unit ellipse at k.
    PixelGaussianSet* render_set = &result.gaussians;
    PixelGaussianSet scaled;
    double cutoff = config.k;
    if (config.k_mode == KMode::cov_scale) {
        scaled = result.gaussians;
        for (std::size_t i = 0; i < scaled.size() * 9; ++i)
            scaled.cov3d.set(i, scaled.cov3d.at(i) * config.k * config.k);
        render_set = &scaled;
        cutoff = 3.0;
    }

    t0 = Clock::now();
    const std::vector<BevGrid> grids = make_scale_grids(config.bev, config.scales);
    result.per_scale =
        render_multiscale(*render_set, grids, cutoff, config.splat_eps, Dtype::f32);
    report.timings_ms["render"] = ms_since(t0);

    t0 = Clock::now();
    std::vector<BevFeatureMap> upsampled;
    upsampled.reserve(result.per_scale.size());
    for (const auto& m : result.per_scale)
        upsampled.push_back(upsample(m, config.bev.resolution, config.upsample_mode));
    result.fused = fuse(upsampled, config.fuse_mode);
    report.timings_ms["fuse"] = ms_since(t0);

    t0 = Clock::now();
    const std::size_t n = result.fused.n_rows();
    Tensor response = Tensor::zeros({n, n});
    for (std::size_t i = 0; i < n * n; ++i) response.set(i, result.fused.values.at(i));
    const ThresholdPick pick = best_threshold_mask(response, scene.gt_bev_mask);
    result.prediction_mask = pick.mask;
    report.threshold = pick.threshold;
    report.iou = pick.iou;

    const BevGrid grid(config.bev.x_min, config.bev.x_max, config.bev.y_min, config.bev.y_max,
                       config.bev.resolution, config.bev.resolution);
    for (double band : {0.0, 10.0, 20.0, 30.0, 40.0}) {
        report.distance_band_iou.emplace_back(
            band, compute_iou(result.prediction_mask, scene.gt_bev_mask, grid, band));
    }
    report.timings_ms["eval"] = ms_since(t0);
    return result;
}

void emit_pgm(const Tensor& plane, const std::string& path) {
    if (plane.rank() != 2) throw std::invalid_argument("emit_pgm: expected a 2D plane");
    const std::size_t rows = plane.dim(0);
    const std::size_t cols = plane.dim(1);
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < plane.size(); ++i) {
        lo = std::min(lo, plane.at(i));
        hi = std::max(hi, plane.at(i));
    }
    const double span = hi - lo;

    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw std::runtime_error("emit_pgm: cannot open " + path);
    std::fprintf(f, "P5\n%zu %zu\n255\n", cols, rows);
    for (std::size_t i = 0; i < plane.size(); ++i) {
        const double v = span > 0.0 ? (plane.at(i) - lo) / span : 0.0;
        const unsigned char b = static_cast<unsigned char>(std::lround(v * 255.0));
        std::fputc(b, f);
    }
    if (std::fclose(f) != 0) throw std::runtime_error("emit_pgm: write failed for " + path);
}

void emit_ppm_overlay(const Tensor& gt, const Tensor& pred, const std::string& path) {
    if (gt.dims() != pred.dims() || gt.rank() != 2)
        throw std::invalid_argument("emit_ppm_overlay: masks must be equal 2D shapes");
    const std::size_t rows = gt.dim(0);
    const std::size_t cols = gt.dim(1);
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw std::runtime_error("emit_ppm_overlay: cannot open " + path);
    std::fprintf(f, "P6\n%zu %zu\n255\n", cols, rows);
    for (std::size_t i = 0; i < gt.size(); ++i) {
        const bool g = gt.at(i) != 0.0;
        const bool p = pred.at(i) != 0.0;
        const unsigned char rgb[3] = {static_cast<unsigned char>(p ? 255 : 0),
                                      static_cast<unsigned char>(g ? 255 : 0), 0};
        std::fwrite(rgb, 1, 3, f);
    }
    if (std::fclose(f) != 0)
        throw std::runtime_error("emit_ppm_overlay: write failed for " + path);
}

PnmHeader parse_pnm_header(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error("parse_pnm_header: cannot open " + path);
    PnmHeader h;
    char magic[3] = {0, 0, 0};
    if (std::fscanf(f, "%2s %d %d %d", magic, &h.width, &h.height, &h.maxval) != 4) {
        std::fclose(f);
        throw std::runtime_error("parse_pnm_header: malformed header in " + path);
    }
    std::fgetc(f);  // single whitespace after maxval
    h.magic = magic;
    h.payload_offset = static_cast<std::size_t>(std::ftell(f));
    std::fclose(f);
    return h;
}

BenchResult bench(const RunConfig& config, std::size_t n, int reps) {
    Rng rng(config.seed + 7);
    BenchResult out;
    out.n_gaussians = n;

    // Random cloud with covariances of a lifted-pixel flavor: a dominant
    // depth-direction spread plus the projection-time floor.
    const std::size_t channels = 8;
    Tensor features = Tensor::zeros({n, channels});
    for (std::size_t i = 0; i < features.size(); ++i) features.set(i, rng.uniform(-1.0, 1.0));
    Tensor mu3d = Tensor::zeros({n, 3});
    Tensor cov3d = Tensor::zeros({n, 3, 3});
    Tensor opacity_t = Tensor::zeros({n});
    for (std::size_t i = 0; i < n; ++i) {
        const double x = rng.uniform(config.bev.x_min, config.bev.x_max);
        const double y = rng.uniform(config.bev.y_min, config.bev.y_max);
        mu3d.set(i * 3 + 0, x);
        mu3d.set(i * 3 + 1, y);
        mu3d.set(i * 3 + 2, rng.uniform(0.0, 2.0));
        const double theta = rng.uniform(0.0, 2.0 * M_PI);
        const double s = rng.uniform(0.2, 2.0);
        const Vec2 v{std::cos(theta), std::sin(theta)};
        cov3d.set(i * 9 + 0, s * s * v.x * v.x);
        cov3d.set(i * 9 + 1, s * s * v.x * v.y);
        cov3d.set(i * 9 + 3, s * s * v.x * v.y);
        cov3d.set(i * 9 + 4, s * s * v.y * v.y);
        cov3d.set(i * 9 + 8, 0.1);
        opacity_t.set(i, rng.uniform(0.05, 1.0));
    }

    PixelGaussianSet set;
    set.mu3d = mu3d;
    set.cov3d = cov3d;
    set.opacity = opacity_t;
    set.features = features;
    set.source.resize(n);

    auto median_of = [&](const std::function<void()>& fn, int r) {
        std::vector<double> times;
        times.reserve(static_cast<std::size_t>(r));
        fn();  // warm-up
        for (int i = 0; i < r; ++i) {
            const auto t0 = Clock::now();
            fn();
            times.push_back(ms_since(t0));
        }
        std::sort(times.begin(), times.end());
        return times[times.size() / 2];
    };

    // Lift stage timed on a pixel grid of comparable cardinality.
    {
        const std::size_t rows = std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(n)));
        const std::size_t cols = (n + rows - 1) / rows;
        const DepthBinning bins =
            make_bins(config.depth.d_min, config.depth.d_max, config.depth.bins);
        Tensor logits = Tensor::zeros({bins.values.size(), rows, cols});
        for (std::size_t i = 0; i < logits.size(); ++i) logits.set(i, rng.normal());
        Tensor op_logits = Tensor::zeros({rows, cols});
        Tensor feats = Tensor::zeros({channels, rows, cols});
        const auto cams = make_camera_ring(1, 70.0, 2.4, 10.0, static_cast<int>(rows),
                                           static_cast<int>(cols));
        const Frustum frustum = build_frustum(cams[0], bins, 1, 0);
        out.median_ms["lift"] = median_of(
            [&] {
                const DepthDistribution dist = softmax_depth(logits);
                auto mc = moments_3d(dist, frustum);
                assemble_gaussians(mc.first, mc.second, op_logits, feats, 0);
            },
            reps);
    }

    const std::vector<BevGrid> grids = make_scale_grids(config.bev, config.scales);
    const BevGrid& fine = grids.back();

    std::vector<BevGaussian2D> projected;
    out.median_ms["project"] = median_of(
        [&] {
            projected.clear();
            projected.reserve(n);
            for (std::size_t i = 0; i < n; ++i) {
                BevGaussian2D g = project_to_bev(set.mean(i), set.covariance(i), fine, config.k,
                                                 config.splat_eps, static_cast<int>(i));
                g.opacity = set.opacity.at(i);
                projected.push_back(g);
            }
        },
        reps);

    std::vector<BevFeatureMap> maps;
    for (const BevGrid& grid : grids) {
        std::vector<BevGaussian2D> proj_scale;
        proj_scale.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            BevGaussian2D g = project_to_bev(set.mean(i), set.covariance(i), grid, config.k,
                                             config.splat_eps, static_cast<int>(i));
            g.opacity = set.opacity.at(i);
            proj_scale.push_back(g);
        }
        const std::string label = "render_" + std::to_string(grid.n_rows);
        out.median_ms[label] = median_of(
            [&] { splat_forward(proj_scale, set.features, grid, config.k, Dtype::f32); }, reps);
        maps.push_back(splat_forward(proj_scale, set.features, grid, config.k, Dtype::f32));
    }
    out.tiled_render_ms = out.median_ms["render_" + std::to_string(fine.n_rows)];

    out.median_ms["fuse"] = median_of(
        [&] {
            std::vector<BevFeatureMap> up;
            up.reserve(maps.size());
            for (const auto& m : maps)
                up.push_back(upsample(m, config.bev.resolution, config.upsample_mode));
            fuse(up, config.fuse_mode);
        },
        reps);

    {
        const int oracle_reps = n > 20000 ? 1 : 3;
        std::vector<double> times;
        for (int i = 0; i < oracle_reps; ++i) {
            const auto t0 = Clock::now();
            splat_oracle(projected, set.features, fine, config.k);
            times.push_back(ms_since(t0));
        }
        std::sort(times.begin(), times.end());
        out.oracle_ms = times[times.size() / 2];
    }
    out.speedup = out.tiled_render_ms > 0.0 ? out.oracle_ms / out.tiled_render_ms : 0.0;
    return out;
}

}  // namespace bevsplat
