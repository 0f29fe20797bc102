#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace bevsplat {

enum class FuseMode { sum, concat };
enum class KMode { truncate, cov_scale };
enum class UpsampleMode { nearest, bilinear };

/// Run configuration. Loaded from JSON; missing fields take the defaults below.
struct RunConfig {
    struct Depth {
        double d_min = 1.0;
        double d_max = 61.0;
        int bins = 64;
    } depth;

    double k = 0.5;

    struct Bev {
        double x_min = -50.0;
        double x_max = 50.0;
        double y_min = -50.0;
        double y_max = 50.0;
        int resolution = 200;
    } bev;

    std::vector<int> scales = {50, 100, 200};
    double opacity_threshold = 0.01;
    FuseMode fuse_mode = FuseMode::sum;
    std::uint64_t seed = 0;

    // Rasterizer knobs beyond the core schema.
    double splat_eps = 0.3;                          // cell^2, added to projected covariance
    KMode k_mode = KMode::truncate;                  // how k shapes the splat extent
    UpsampleMode upsample_mode = UpsampleMode::bilinear;
    int stride = 1;                                  // feature stride for frustum building

    void validate() const;
};

/// Parse a JSON document into a RunConfig, filling defaults and validating
/// invariants. Throws std::invalid_argument naming the offending field.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::string& path);

std::string fuse_mode_name(FuseMode m);

}  // namespace bevsplat
