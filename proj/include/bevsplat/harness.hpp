#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "bevsplat/bev.hpp"
#include "bevsplat/config.hpp"
#include "bevsplat/geometry.hpp"
#include "bevsplat/lift.hpp"
#include "bevsplat/tensor.hpp"

namespace bevsplat {

enum class FeatureMode { onehot_class, random };

struct Box {
    Vec3 center;  // meters; z is the vertical mid-height
    Vec3 size;    // full extents (x, y, z) in the box frame
    double yaw = 0.0;
};

/// Synthetic multi-camera scene description. The default rig is a ring of six
/// cameras spaced 60 degrees apart with 70-degree horizontal FOV.
struct SceneSpec {
    std::vector<Box> boxes;
    std::vector<CameraModel> cameras;
    double depth_noise_sigma = 0.0;  // meters; 0 gives one-hot depth bins
    FeatureMode feature_mode = FeatureMode::onehot_class;
    std::uint64_t seed = 0;

    static SceneSpec standard_five_box_scene(double depth_noise_sigma = 0.0);
};

std::vector<CameraModel> make_camera_ring(int count = 6, double hfov_deg = 70.0,
                                          double height = 2.6, double pitch_deg = 10.0,
                                          int image_height = 96, int image_width = 160);

/// Per-camera network-output stand-ins plus the ground-truth BEV occupancy.
struct GeneratedScene {
    std::vector<CameraModel> cameras;
    std::vector<Tensor> depth_logits;    // B x H' x W' per camera
    std::vector<Tensor> features;        // C x H' x W' per camera
    std::vector<Tensor> opacity_logits;  // H' x W' per camera
    Tensor gt_bev_mask;                  // n_rows x n_cols, {0,1}
};

/// Ray-casts every strided pixel against the boxes: ground-truth depth is the
/// nearest surface hit (background pixels sit at d_max), depth logits encode
/// a discretized Gaussian around it (one-hot at the nearest bin when sigma is
/// 0), opacity logits are +4 on box pixels and -4 elsewhere, and gt_bev_mask
/// rasterizes box footprints. Warns (stderr) about boxes no camera sees.
GeneratedScene gen_scene(const SceneSpec& spec, const RunConfig& config);

struct EvalReport {
    double iou = 0.0;
    double threshold = 0.0;  // response cut maximizing IoU, reported for comparability
    std::vector<std::pair<double, double>> distance_band_iou;  // (min_distance m, IoU)
    double retained_fraction = 1.0;
    std::map<std::string, double> timings_ms;
};

struct PipelineResult {
    BevFeatureMap fused;
    std::vector<BevFeatureMap> per_scale;
    PixelGaussianSet gaussians;  // after opacity filtering
    Tensor prediction_mask;      // n x n {0,1} at the chosen threshold
    EvalReport report;
};

/// softmax -> 3D moments -> assembly -> opacity filter -> multi-scale render
/// -> fuse. The prediction mask thresholds the class channel (channel 0) at
/// the IoU-maximizing cut against the scene's ground truth.
PipelineResult run_pipeline(const RunConfig& config, const GeneratedScene& scene);

/// IoU over binary masks, excluding cells whose center is closer than
/// min_distance to the ego origin from both masks. Empty union counts as 1.
double compute_iou(const Tensor& pred, const Tensor& gt, const BevGrid& grid,
                   double min_distance = 0.0);

/// P5 grayscale of a 2D plane, min-max normalized to 0-255 (all zeros when
/// the plane is constant).
void emit_pgm(const Tensor& plane, const std::string& path);

/// P6 overlay of two masks: ground truth green, prediction red, overlap yellow.
void emit_ppm_overlay(const Tensor& gt, const Tensor& pred, const std::string& path);

struct PnmHeader {
    std::string magic;
    int width = 0;
    int height = 0;
    int maxval = 0;
    std::size_t payload_offset = 0;
};

PnmHeader parse_pnm_header(const std::string& path);

struct BenchResult {
    std::size_t n_gaussians = 0;
    std::map<std::string, double> median_ms;  // lift / project / render_<s> / fuse
    double oracle_ms = 0.0;
    double tiled_render_ms = 0.0;
    double speedup = 0.0;  // oracle / tiled at the finest scale
};

/// Times pipeline stages (median over `reps` warm repetitions) on a random
/// Gaussian cloud of size n; the oracle renderer runs once when n is large.
BenchResult bench(const RunConfig& config, std::size_t n, int reps = 10);

}  // namespace bevsplat
