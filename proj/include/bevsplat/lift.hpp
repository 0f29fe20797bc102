#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "bevsplat/geometry.hpp"
#include "bevsplat/tensor.hpp"

namespace bevsplat {

/// Per-pixel categorical distribution over depth bins, shape B x H' x W'.
/// Logits are retained for gradient flow.
struct DepthDistribution {
    Tensor probs;
    Tensor logits;

    std::size_t bins() const { return probs.dim(0); }
    std::size_t rows() const { return probs.dim(1); }
    std::size_t cols() const { return probs.dim(2); }
};

/// Depth-space mean/uncertainty per pixel plus the tolerance range
/// [mu - k*sigma, mu + k*sigma]; diagnostic companion to the 3D moments.
struct DepthMoments {
    Tensor mu;
    Tensor sigma;
    Tensor range_lo;
    Tensor range_hi;
};

/// Provenance of one lifted Gaussian: camera and feature-pixel coordinates.
struct GaussianSource {
    int camera_index = 0;
    int row = 0;
    int col = 0;
};

/// Flattened per-pixel Gaussian cloud: means (N x 3, ego meters), covariances
/// (N x 3 x 3), opacities (N, in [0,1]), features (N x C), and sources.
/// N is the source count; when N = 0 the tensors hold one zero placeholder
/// row because the container cannot represent zero-sized dims.
struct PixelGaussianSet {
    Tensor mu3d;
    Tensor cov3d;
    Tensor opacity;
    Tensor features;
    std::vector<GaussianSource> source;

    std::size_t size() const { return source.size(); }
    std::size_t channels() const { return features.dim(1); }

    Vec3 mean(std::size_t i) const {
        return {mu3d.at(i * 3), mu3d.at(i * 3 + 1), mu3d.at(i * 3 + 2)};
    }
    Mat3 covariance(std::size_t i) const {
        Mat3 c;
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b)
                c(a, b) = cov3d.at(i * 9 + static_cast<std::size_t>(a) * 3 +
                                   static_cast<std::size_t>(b));
        return c;
    }
};

/// Numerically stable per-pixel softmax over the bin axis of B x H' x W'
/// logits. Throws on non-finite input.
DepthDistribution softmax_depth(const Tensor& logits);

/// mu = sum P_i d_i, sigma^2 = sum P_i (d_i - mu)^2, range = mu -+ k*sigma.
/// Accumulation runs in double regardless of the stored dtype.
DepthMoments depth_moments(const DepthDistribution& dist, const DepthBinning& bins, double k);

/// Per-pixel 3D moments over the frustum points:
///   mu3d  = sum_i P_i p_i
///   cov3d = sum_i P_i (p_i - mu3d)(p_i - mu3d)^T
/// Returns (mu3d N x 3, cov3d N x 3 x 3) with N = H' * W' in row-major pixel
/// order. Covariances are computed in double and stored at the probs dtype.
std::pair<Tensor, Tensor> moments_3d(const DepthDistribution& dist, const Frustum& frustum);

/// Bundle moments with logistic(opacity_logits) and features (C x H' x W',
/// C >= 1) into a flat Gaussian set.
PixelGaussianSet assemble_gaussians(const Tensor& mu3d, const Tensor& cov3d,
                                    const Tensor& opacity_logits, const Tensor& features,
                                    int camera_index = 0);

/// Concatenates sets (same C) preserving order; feature indices stay aligned.
PixelGaussianSet merge_gaussians(const std::vector<PixelGaussianSet>& sets);

struct FilterResult {
    PixelGaussianSet retained;
    double retained_fraction = 1.0;
};

/// Keeps entries with opacity >= threshold (threshold in [0,1]), preserving order.
FilterResult filter_opacity(const PixelGaussianSet& gaussians, double threshold);

}  // namespace bevsplat
