#pragma once

#include <cstddef>
#include <vector>

#include "bevsplat/math.hpp"
#include "bevsplat/tensor.hpp"

namespace bevsplat {

/// Metric BEV extent and its cell grid. Rows index ego x (forward), columns
/// index ego y (sideways); scale_* are cells per meter.
struct BevGrid {
    double x_min = 0.0, x_max = 0.0;
    double y_min = 0.0, y_max = 0.0;
    int n_rows = 0, n_cols = 0;

    BevGrid() = default;
    BevGrid(double x_min_, double x_max_, double y_min_, double y_max_, int n_rows_, int n_cols_);

    double scale_row() const { return n_rows / (x_max - x_min); }
    double scale_col() const { return n_cols / (y_max - y_min); }

    /// Metric center of cell (row, col).
    Vec2 cell_center_meters(int row, int col) const {
        return {x_min + (row + 0.5) / scale_row(), y_min + (col + 0.5) / scale_col()};
    }
};

/// A Gaussian projected onto the BEV plane. The 2D frame is the output of the
/// BEV scaling map, which swaps ego axes: component 0 is the column coordinate
/// (from ego y), component 1 is the row coordinate (from ego x). cov2d holds
/// [[a, b], [b, c]] in that frame; cell (r, c) has center (c + 0.5, r + 0.5).
struct BevGaussian2D {
    Vec2 mu2d;        // (col, row) in cells
    Mat2 cov2d;       // cell^2, regularized when eps > 0
    Mat2 inv_cov2d;   // inverse of the regularized covariance
    double opacity = 0.0;
    int feature_index = 0;
    double cull_radius = 0.0;  // cells; axis-aligned bound on the truncation ellipse

    double mu_col() const { return mu2d.x; }
    double mu_row() const { return mu2d.y; }
};

/// Dense splat output: C x n_rows x n_cols feature values plus the
/// channel-independent accumulated kernel weight per cell.
struct BevFeatureMap {
    Tensor values;
    Tensor weight;

    std::size_t channels() const { return values.dim(0); }
    std::size_t n_rows() const { return values.dim(1); }
    std::size_t n_cols() const { return values.dim(2); }
};

/// Projects one 3D Gaussian onto the grid. The mean maps with the axis swap
/// (row from ego x, col from ego y); the covariance follows the scaled 2x2
/// product over the ego x/y submatrix:
///   a = cov_yy * scale_col^2, b = cov_xy * scale_col * scale_row,
///   c = cov_xx * scale_row^2.
/// eps (cell^2) is added to both diagonal entries before inversion, and
/// cull_radius = k * sqrt(max eigenvalue) + 0.5.
BevGaussian2D project_to_bev(const Vec3& mu3d, const Mat3& cov3d, const BevGrid& grid, double k,
                             double eps, int feature_index = 0);

/// Additive truncated splat: each cell center x accumulates
/// F_i * alpha_i * exp(-0.5 (x-mu)^T inv_cov (x-mu)) over Gaussians with
/// Mahalanobis distance m(x) <= k; beyond k the contribution is exactly zero.
/// Tiled 16x16 with per-tile accumulation in Gaussian index order, so output
/// is identical for any worker-thread count. Values accumulate in double and
/// are stored at `dtype`.
BevFeatureMap splat_forward(const std::vector<BevGaussian2D>& gaussians, const Tensor& features,
                            const BevGrid& grid, double k, Dtype dtype = Dtype::f32);

/// Reference renderer: plain loop over (cell, gaussian, channel) in double
/// precision with no culling beyond the m <= k truncation. Ground truth for
/// splat_forward; always emits f64.
BevFeatureMap splat_oracle(const std::vector<BevGaussian2D>& gaussians, const Tensor& features,
                           const BevGrid& grid, double k);

}  // namespace bevsplat
