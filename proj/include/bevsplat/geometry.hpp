#pragma once

#include <cstddef>
#include <vector>

#include "bevsplat/math.hpp"
#include "bevsplat/tensor.hpp"

namespace bevsplat {

/// Uniform depth grid over [d_min, d_max): values[i] = d_min + i*(d_max-d_min)/B.
struct DepthBinning {
    double d_min = 0.0;
    double d_max = 0.0;
    int count = 0;
    std::vector<double> values;

    double step() const { return (d_max - d_min) / count; }
};

DepthBinning make_bins(double d_min, double d_max, int bins);

/// Pinhole camera. Extrinsics map ego-frame points to camera-frame points
/// (x right, y down, z forward); unprojection applies the inverse.
struct CameraModel {
    Mat3 intrinsics;
    Mat4 extrinsics;  // ego -> camera
    int image_height = 0;
    int image_width = 0;

    CameraModel(const Mat3& intrinsics_, const Mat4& extrinsics_, int height, int width);

    /// Ego-frame position of the optical center.
    Vec3 position() const { return extrinsics.rigid_inverse().translation(); }
};

struct PixelDepth {
    double u = 0.0;
    double v = 0.0;
    double d = 0.0;  // planar depth: camera-frame z
};

/// Lift pixel (u, v) at planar depth d into the ego frame:
/// p = E^-1 (d * I^-1 [u, v, 1]^T).
Vec3 unproject(const CameraModel& cam, double u, double v, double d);

/// Inverse of unproject: camera-frame z is the returned depth.
/// Throws std::domain_error when the point is at or behind the image plane.
PixelDepth project(const CameraModel& cam, const Vec3& ego_point);

/// Ego-frame lattice of unprojected points for every strided pixel and depth
/// bin, shape (H/stride) x (W/stride) x B x 3. Pixels sample strided cell
/// centers: u = (j + 0.5) * stride, v = (i + 0.5) * stride.
struct Frustum {
    Tensor points;
    int camera_index = 0;

    std::size_t rows() const { return points.dim(0); }
    std::size_t cols() const { return points.dim(1); }
    std::size_t bins() const { return points.dim(2); }

    Vec3 point(std::size_t i, std::size_t j, std::size_t b) const {
        const std::size_t base = ((i * cols() + j) * bins() + b) * 3;
        return {points.at(base), points.at(base + 1), points.at(base + 2)};
    }
};

Frustum build_frustum(const CameraModel& cam, const DepthBinning& bins, int stride,
                      int camera_index = 0, Dtype dtype = Dtype::f32);

}  // namespace bevsplat
