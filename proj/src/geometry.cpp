#include "bevsplat/geometry.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace bevsplat {

DepthBinning make_bins(double d_min, double d_max, int bins) {
    if (!(d_min > 0.0)) throw std::invalid_argument("make_bins: d_min must be > 0");
    if (!(d_max > d_min)) throw std::invalid_argument("make_bins: d_max must be > d_min");
    if (bins < 2) throw std::invalid_argument("make_bins: bins must be >= 2");
    DepthBinning b;
    b.d_min = d_min;
    b.d_max = d_max;
    b.count = bins;
    b.values.resize(static_cast<std::size_t>(bins));
    const double step = (d_max - d_min) / bins;
    for (int i = 0; i < bins; ++i) b.values[static_cast<std::size_t>(i)] = d_min + i * step;
    return b;
}

CameraModel::CameraModel(const Mat3& intrinsics_, const Mat4& extrinsics_, int height, int width)
    : intrinsics(intrinsics_), extrinsics(extrinsics_), image_height(height), image_width(width) {
    if (height < 1 || width < 1)
        throw std::invalid_argument("CameraModel: image size must be positive");
    if (intrinsics(2, 2) != 1.0)
        throw std::invalid_argument("CameraModel: intrinsics[2][2] must be 1");
    if (intrinsics(1, 0) != 0.0 || intrinsics(2, 0) != 0.0 || intrinsics(2, 1) != 0.0)
        throw std::invalid_argument("CameraModel: intrinsics must be upper triangular");
    if (intrinsics.det() == 0.0)
        throw std::invalid_argument("CameraModel: intrinsics must be invertible");
    const Mat3 r = extrinsics.rotation();
    const Mat3 rtr = r.transposed() * r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            const double expect = i == j ? 1.0 : 0.0;
            if (std::abs(rtr(i, j) - expect) > 1e-6)
                throw std::invalid_argument("CameraModel: extrinsics rotation not orthonormal");
        }
    if (extrinsics(3, 0) != 0.0 || extrinsics(3, 1) != 0.0 || extrinsics(3, 2) != 0.0 ||
        extrinsics(3, 3) != 1.0)
        throw std::invalid_argument("CameraModel: extrinsics last row must be [0,0,0,1]");
}

Vec3 unproject(const CameraModel& cam, double u, double v, double d) {
    if (!(d > 0.0)) throw std::invalid_argument("unproject: depth must be > 0");
    const Vec3 ray = cam.intrinsics.inverse() * Vec3{u, v, 1.0};
    const Vec3 cam_point = ray * d;
    return cam.extrinsics.rigid_inverse().transform_point(cam_point);
}

PixelDepth project(const CameraModel& cam, const Vec3& ego_point) {
    const Vec3 q = cam.extrinsics.transform_point(ego_point);
    if (!(q.z > 0.0)) throw std::domain_error("project: point behind camera");
    const Vec3 h = cam.intrinsics * q;
    return {h.x / q.z, h.y / q.z, q.z};
}

Frustum build_frustum(const CameraModel& cam, const DepthBinning& bins, int stride,
                      int camera_index, Dtype dtype) {
    if (stride < 1) throw std::invalid_argument("build_frustum: stride must be >= 1");
    if (cam.image_height % stride != 0 || cam.image_width % stride != 0)
        throw std::invalid_argument("build_frustum: stride " + std::to_string(stride) +
                                    " does not divide image size " +
                                    std::to_string(cam.image_height) + "x" +
                                    std::to_string(cam.image_width));
    const std::size_t rows = static_cast<std::size_t>(cam.image_height / stride);
    const std::size_t cols = static_cast<std::size_t>(cam.image_width / stride);
    const std::size_t nbins = bins.values.size();

    Frustum f;
    f.camera_index = camera_index;
    f.points = Tensor::zeros({rows, cols, nbins, 3}, dtype);

    // p(d) = d * (R^T w) + c with w the intrinsics-inverted pixel ray and c the
    // camera position, so points along one pixel stay collinear by construction.
    const Mat3 k_inv = cam.intrinsics.inverse();
    const Mat4 cam_to_ego = cam.extrinsics.rigid_inverse();
    const Mat3 rot = cam_to_ego.rotation();
    const Vec3 origin = cam_to_ego.translation();

    std::size_t flat = 0;
    for (std::size_t i = 0; i < rows; ++i) {
        const double v = (static_cast<double>(i) + 0.5) * stride;
        for (std::size_t j = 0; j < cols; ++j) {
            const double u = (static_cast<double>(j) + 0.5) * stride;
            const Vec3 dir = rot * (k_inv * Vec3{u, v, 1.0});
            for (std::size_t b = 0; b < nbins; ++b) {
                const Vec3 p = origin + dir * bins.values[b];
                f.points.set(flat++, p.x);
                f.points.set(flat++, p.y);
                f.points.set(flat++, p.z);
            }
        }
    }
    return f;
}

}  // namespace bevsplat
