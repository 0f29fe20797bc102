#pragma once

#include <cstdint>
#include <vector>

#include "bevsplat/bev.hpp"
#include "bevsplat/geometry.hpp"
#include "bevsplat/lift.hpp"
#include "bevsplat/tensor.hpp"

namespace bevsplat {

/// Gradients of a scalar loss with respect to each projected Gaussian's
/// parameters. All tensors are f64.
struct SplatGrads {
    Tensor d_features;  // N x C
    Tensor d_opacity;   // N
    Tensor d_mu2d;      // N x 2, (col, row) order matching BevGaussian2D
    Tensor d_cov2d;     // N x 2 x 2, symmetric
};

/// Backward of splat_forward for L = sum_x <d_out(x), F_BEV(x)>. Truncated
/// cells (m > k) contribute zero gradient, matching the forward cutoff.
/// The covariance gradient is taken with respect to the (regularized) 2D
/// covariance, propagated through the inverse via dQ = -Q dM Q.
SplatGrads splat_backward(const std::vector<BevGaussian2D>& gaussians, const Tensor& features,
                          const BevGrid& grid, double k, const Tensor& d_out);

/// Backward of the BEV covariance projection. Takes the symmetrized cotangent
/// on the projected covariance [[a, b], [b, c]] and returns the gradient on
/// the ego x/y covariance block:
///   dSigma_xx = d_c * scale_row^2
///   dSigma_xy = d_b * scale_col * scale_row
///   dSigma_yy = d_a * scale_col^2
Mat2 bev_projection_backward(const Mat2& d_cov2d, double scale_row, double scale_col);

/// Backward of moments_3d: dL/dP_j = p_j . d_mu3d + (p_j - mu)^T D (p_j - mu),
/// valid because the first central moment of P vanishes. Returns d_probs with
/// the distribution's B x H' x W' shape (f64).
Tensor moments_backward(const DepthDistribution& dist, const Frustum& frustum,
                        const Tensor& d_mu3d, const Tensor& d_cov3d);

/// Categorical softmax Jacobian: d_logit_b = P_b (d_prob_b - sum_a P_a d_prob_a).
Tensor softmax_backward(const DepthDistribution& dist, const Tensor& d_probs);

/// Gradients of the synthetic scalar loss with respect to every learnable
/// input of the lifting chain (single camera).
struct GradBuffers {
    Tensor d_features;        // N x C
    Tensor d_opacity_logits;  // H' x W'
    Tensor d_depth_logits;    // B x H' x W'
    Tensor d_mu3d;            // N x 3
    Tensor d_cov3d;           // N x 3 x 3
};

/// Small randomized single-camera scene for finite-difference checking:
/// depth logits, opacity logits and features feed the full chain
/// softmax -> 3D moments -> assembly -> BEV projection -> splat, and the loss
/// is the inner product of the rendered map with a fixed random cotangent.
struct GradCheckScene {
    DepthBinning bins;
    CameraModel camera;
    BevGrid grid;
    double k = 0.5;
    double eps = 0.3;
    int stride = 1;
    Tensor depth_logits;    // B x H' x W'
    Tensor opacity_logits;  // H' x W'
    Tensor features;        // C x H' x W'
    Tensor d_out;           // C x rows x cols cotangent defining the loss
    Dtype dtype = Dtype::f64;
};

struct GradCheckSpec {
    int rows = 4;
    int cols = 5;
    int bins = 8;
    int channels = 2;
    int grid_resolution = 24;
    double grid_extent = 9.0;  // meters, symmetric
    double d_min = 1.0;
    double d_max = 10.0;
    double k = 0.5;
    double eps = 0.3;
    std::uint64_t seed = 1;
    Dtype dtype = Dtype::f64;
};

GradCheckScene make_grad_check_scene(const GradCheckSpec& spec);

/// Forward value of the loss plus an order-independent signature of which
/// (gaussian, cell) pairs survived truncation; a signature change between the
/// two sides of a central difference marks the entry as boundary-crossing.
struct LossEval {
    double loss = 0.0;
    std::uint64_t coverage_signature = 0;
};

LossEval full_chain_loss(const GradCheckScene& scene);

/// Analytic gradients of full_chain_loss.
GradBuffers full_chain_backward(const GradCheckScene& scene);

struct GradGroupReport {
    double max_rel_err = 0.0;
    double mean_rel_err = 0.0;
    std::size_t entries = 0;
    std::size_t excluded = 0;  // truncation-boundary entries skipped
};

struct GradCheckReport {
    GradGroupReport features;
    GradGroupReport opacity_logits;
    GradGroupReport depth_logits;

    double max_rel_err() const;
    std::size_t total_excluded() const;
};

/// Central finite differences over every scalar input, compared against the
/// analytic chain. h is a relative step (per-entry step h * max(1, |value|)).
/// Relative errors are measured against max(|analytic|, |numeric|, group scale).
GradCheckReport grad_check(const GradCheckSpec& spec, double h);

/// Same check on a caller-built scene (scene tensors are perturbed in place
/// and restored).
GradCheckReport grad_check_scene(GradCheckScene& scene, double h);

/// Default step per dtype: 1e-3 (f32) and 1e-4 (f64) keep both the h^2
/// truncation term and input-quantization noise inside each dtype's contract.
double default_fd_step(Dtype dtype);

}  // namespace bevsplat
