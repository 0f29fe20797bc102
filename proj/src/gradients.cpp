#include "bevsplat/gradients.hpp"

#include <algorithm>
#include <functional>
#include <cmath>
#include <stdexcept>

#include "bevsplat/parallel.hpp"
#include "bevsplat/rng.hpp"

namespace bevsplat {

namespace {


struct CellBounds {
    int row_lo, row_hi, col_lo, col_hi;
    bool empty;
};

CellBounds cell_bounds(const BevGaussian2D& g, const BevGrid& grid) {
    CellBounds r{};
    const double cr = g.cull_radius;
    r.row_lo = std::max(0, static_cast<int>(std::floor(g.mu_row() - cr)));
    r.row_hi = std::min(grid.n_rows - 1, static_cast<int>(std::floor(g.mu_row() + cr)));
    r.col_lo = std::max(0, static_cast<int>(std::floor(g.mu_col() - cr)));
    r.col_hi = std::min(grid.n_cols - 1, static_cast<int>(std::floor(g.mu_col() + cr)));
    r.empty = r.row_lo > r.row_hi || r.col_lo > r.col_hi || !(cr > 0.0);
    return r;
}

std::uint64_t mix_hash(std::uint64_t x) {
    x ^= x >> 33;
    x *= 0xff51afd7ed558ccdULL;
    x ^= x >> 33;
    x *= 0xc4ceb9fe1a85ec53ULL;
    x ^= x >> 33;
    return x;
}

}  // namespace

SplatGrads splat_backward(const std::vector<BevGaussian2D>& gaussians, const Tensor& features,
                          const BevGrid& grid, double k, const Tensor& d_out) {
    const std::size_t n = gaussians.size();
    const std::size_t channels = features.dim(1);
    const std::size_t rows = static_cast<std::size_t>(grid.n_rows);
    const std::size_t cols = static_cast<std::size_t>(grid.n_cols);
    if (d_out.rank() != 3 || d_out.dim(0) != channels || d_out.dim(1) != rows ||
        d_out.dim(2) != cols)
        throw std::invalid_argument("splat_backward: d_out must be C x n_rows x n_cols");
    const double k_sq = k * k;

    SplatGrads out;
    const std::size_t n_alloc = std::max<std::size_t>(n, 1);
    out.d_features = Tensor::zeros({n_alloc, channels}, Dtype::f64);
    out.d_opacity = Tensor::zeros({n_alloc}, Dtype::f64);
    out.d_mu2d = Tensor::zeros({n_alloc, 2}, Dtype::f64);
    out.d_cov2d = Tensor::zeros({n_alloc, 2, 2}, Dtype::f64);
    if (n == 0) return out;

    // Per-gaussian accumulation in f64 scratch over the gaussian's cell range;
    // parallel over gaussians, each owning its output rows exclusively.
    parallel_for(n, [&](std::size_t i) {
        const BevGaussian2D& g = gaussians[i];
        const CellBounds r = cell_bounds(g, grid);
        if (r.empty) return;
        const double q00 = g.inv_cov2d(0, 0), q01 = g.inv_cov2d(0, 1), q11 = g.inv_cov2d(1, 1);
        const std::size_t fbase = static_cast<std::size_t>(g.feature_index) * channels;

        std::vector<double> d_feat(channels, 0.0);
        double d_op = 0.0;
        double d_mu0 = 0.0, d_mu1 = 0.0;
        double d_c00 = 0.0, d_c01 = 0.0, d_c11 = 0.0;

        for (int row = r.row_lo; row <= r.row_hi; ++row) {
            const double dr = (row + 0.5) - g.mu_row();
            for (int col = r.col_lo; col <= r.col_hi; ++col) {
                const double dc = (col + 0.5) - g.mu_col();
                const double q = q00 * dc * dc + 2.0 * q01 * dc * dr + q11 * dr * dr;
                if (!(q <= k_sq)) continue;
                const double w = std::exp(-0.5 * q);

                double feat_dot = 0.0;  // <F_i, d_out(x)>
                for (std::size_t ch = 0; ch < channels; ++ch) {
                    const double dout = d_out.at((ch * rows + row) * cols + col);
                    feat_dot += features.at(fbase + ch) * dout;
                    d_feat[ch] += g.opacity * w * dout;
                }
                d_op += w * feat_dot;

                // l = alpha <F, d_out> w; dl/dmu = l * Q delta, dl/dSigma' =
                // 0.5 l (Q delta)(Q delta)^T through the inverse.
                const double l = g.opacity * feat_dot * w;
                const double g0 = q00 * dc + q01 * dr;
                const double g1 = q01 * dc + q11 * dr;
                d_mu0 += l * g0;
                d_mu1 += l * g1;
                d_c00 += 0.5 * l * g0 * g0;
                d_c01 += 0.5 * l * g0 * g1;
                d_c11 += 0.5 * l * g1 * g1;
            }
        }

        for (std::size_t ch = 0; ch < channels; ++ch) out.d_features.set(i * channels + ch, d_feat[ch]);
        out.d_opacity.set(i, d_op);
        out.d_mu2d.set(i * 2 + 0, d_mu0);
        out.d_mu2d.set(i * 2 + 1, d_mu1);
        out.d_cov2d.set(i * 4 + 0, d_c00);
        out.d_cov2d.set(i * 4 + 1, d_c01);
        out.d_cov2d.set(i * 4 + 2, d_c01);
        out.d_cov2d.set(i * 4 + 3, d_c11);
    });
    return out;
}

Mat2 bev_projection_backward(const Mat2& d_cov2d, double scale_row, double scale_col) {
    const double d_a = d_cov2d(0, 0);
    const double d_b = 0.5 * (d_cov2d(0, 1) + d_cov2d(1, 0));
    const double d_c = d_cov2d(1, 1);
    Mat2 out;
    out(0, 0) = d_c * scale_row * scale_row;
    out(0, 1) = d_b * scale_col * scale_row;
    out(1, 0) = d_b * scale_col * scale_row;
    out(1, 1) = d_a * scale_col * scale_col;
    return out;
}

Tensor moments_backward(const DepthDistribution& dist, const Frustum& frustum,
                        const Tensor& d_mu3d, const Tensor& d_cov3d) {
    const std::size_t bins = dist.bins();
    const std::size_t rows = dist.rows();
    const std::size_t cols = dist.cols();
    const std::size_t pixels = rows * cols;
    if (frustum.rows() != rows || frustum.cols() != cols || frustum.bins() != bins)
        throw std::invalid_argument("moments_backward: frustum shape mismatch");
    if (d_mu3d.dim(0) != pixels || d_cov3d.dim(0) != pixels)
        throw std::invalid_argument("moments_backward: cotangent count mismatch");

    Tensor d_probs = Tensor::zeros({bins, rows, cols}, Dtype::f64);
    parallel_for(pixels, [&](std::size_t p) {
        const std::size_t i = p / cols;
        const std::size_t j = p % cols;
        // Recompute the pixel mean; cross terms vanish because the first
        // central moment of P is zero.
        double mean[3] = {0.0, 0.0, 0.0};
        for (std::size_t b = 0; b < bins; ++b) {
            const double w = dist.probs.at(b * pixels + p);
            const Vec3 pt = frustum.point(i, j, b);
            mean[0] += w * pt.x;
            mean[1] += w * pt.y;
            mean[2] += w * pt.z;
        }
        double dmu[3], dcov[3][3];
        for (int a = 0; a < 3; ++a) dmu[a] = d_mu3d.at(p * 3 + static_cast<std::size_t>(a));
        for (int a = 0; a < 3; ++a)
            for (int c = 0; c < 3; ++c)
                dcov[a][c] =
                    d_cov3d.at(p * 9 + static_cast<std::size_t>(a) * 3 + static_cast<std::size_t>(c));

        for (std::size_t b = 0; b < bins; ++b) {
            const Vec3 pt = frustum.point(i, j, b);
            const double d[3] = {pt.x - mean[0], pt.y - mean[1], pt.z - mean[2]};
            double v = pt.x * dmu[0] + pt.y * dmu[1] + pt.z * dmu[2];
            for (int a = 0; a < 3; ++a)
                for (int c = 0; c < 3; ++c) v += d[a] * dcov[a][c] * d[c];
            d_probs.set(b * pixels + p, v);
        }
    });
    return d_probs;
}

Tensor softmax_backward(const DepthDistribution& dist, const Tensor& d_probs) {
    const std::size_t bins = dist.bins();
    const std::size_t pixels = dist.rows() * dist.cols();
    if (d_probs.size() != bins * pixels)
        throw std::invalid_argument("softmax_backward: cotangent shape mismatch");
    Tensor d_logits = Tensor::zeros(dist.probs.dims(), Dtype::f64);
    for (std::size_t p = 0; p < pixels; ++p) {
        double inner = 0.0;
        for (std::size_t b = 0; b < bins; ++b)
            inner += dist.probs.at(b * pixels + p) * d_probs.at(b * pixels + p);
        for (std::size_t b = 0; b < bins; ++b)
            d_logits.set(b * pixels + p,
                         dist.probs.at(b * pixels + p) * (d_probs.at(b * pixels + p) - inner));
    }
    return d_logits;
}

GradCheckScene make_grad_check_scene(const GradCheckSpec& spec) {
    if (spec.rows * spec.cols > 200)
        throw std::invalid_argument("make_grad_check_scene: scene too large for FD (N <= 200)");
    Rng rng(spec.seed);

    // Camera slightly above the grid origin looking along +x so frustum
    // points land inside the metric extent.
    Mat3 intr = Mat3::identity();
    const double f = 0.9 * spec.cols;
    intr(0, 0) = f;
    intr(1, 1) = f;
    intr(0, 2) = 0.5 * spec.cols;
    intr(1, 2) = 0.5 * spec.rows;
    // ego -> camera: camera x = -ego y, camera y = -ego z, camera z = ego x.
    Mat3 rot;
    rot(0, 1) = -1.0;
    rot(1, 2) = -1.0;
    rot(2, 0) = 1.0;
    const Vec3 cam_pos{0.0, 0.0, 1.0};
    const Mat4 ego_to_cam = Mat4::from_rt(rot, (rot * cam_pos) * -1.0);

    GradCheckScene scene{
        make_bins(spec.d_min, spec.d_max, spec.bins),
        CameraModel(intr, ego_to_cam, spec.rows, spec.cols),
        BevGrid(-spec.grid_extent, spec.grid_extent, -spec.grid_extent, spec.grid_extent,
                spec.grid_resolution, spec.grid_resolution),
        spec.k,
        spec.eps,
        1,
        Tensor::zeros({static_cast<std::size_t>(spec.bins), static_cast<std::size_t>(spec.rows),
                       static_cast<std::size_t>(spec.cols)},
                      spec.dtype),
        Tensor::zeros({static_cast<std::size_t>(spec.rows), static_cast<std::size_t>(spec.cols)},
                      spec.dtype),
        Tensor::zeros({static_cast<std::size_t>(spec.channels), static_cast<std::size_t>(spec.rows),
                       static_cast<std::size_t>(spec.cols)},
                      spec.dtype),
        Tensor::zeros({static_cast<std::size_t>(spec.channels),
                       static_cast<std::size_t>(spec.grid_resolution),
                       static_cast<std::size_t>(spec.grid_resolution)},
                      spec.dtype),
        spec.dtype,
    };

    for (std::size_t i = 0; i < scene.depth_logits.size(); ++i)
        scene.depth_logits.set(i, rng.normal());
    for (std::size_t i = 0; i < scene.opacity_logits.size(); ++i)
        scene.opacity_logits.set(i, rng.normal());
    for (std::size_t i = 0; i < scene.features.size(); ++i) scene.features.set(i, rng.normal());
    for (std::size_t i = 0; i < scene.d_out.size(); ++i) scene.d_out.set(i, rng.normal());
    return scene;
}

namespace {

struct ChainState {
    DepthDistribution dist;
    Frustum frustum;
    PixelGaussianSet gaussians;
    std::vector<BevGaussian2D> projected;
};

ChainState run_chain(const GradCheckScene& scene) {
    // Inputs stay quantized at the scene dtype; all downstream arithmetic and
    // storage run in f64 so the finite-difference reference only sees the
    // function of the (possibly f32-rounded) parameters, not storage noise.
    ChainState s;
    s.dist = softmax_depth(scene.depth_logits.cast(Dtype::f64));
    s.frustum = build_frustum(scene.camera, scene.bins, scene.stride, 0, Dtype::f64);
    auto [mu3d, cov3d] = moments_3d(s.dist, s.frustum);
    s.gaussians = assemble_gaussians(mu3d, cov3d, scene.opacity_logits.cast(Dtype::f64),
                                     scene.features.cast(Dtype::f64), 0);
    s.projected.reserve(s.gaussians.size());
    for (std::size_t i = 0; i < s.gaussians.size(); ++i)
        s.projected.push_back(project_to_bev(s.gaussians.mean(i), s.gaussians.covariance(i),
                                             scene.grid, scene.k, scene.eps,
                                             static_cast<int>(i)));
    for (std::size_t i = 0; i < s.projected.size(); ++i)
        s.projected[i].opacity = s.gaussians.opacity.at(i);
    return s;
}

}  // namespace

LossEval full_chain_loss(const GradCheckScene& scene) {
    const ChainState s = run_chain(scene);
    const BevFeatureMap map =
        splat_forward(s.projected, s.gaussians.features, scene.grid, scene.k, Dtype::f64);

    LossEval ev;
    for (std::size_t i = 0; i < map.values.size(); ++i)
        ev.loss += map.values.at(i) * scene.d_out.at(i);

    const double k_sq = scene.k * scene.k;
    const std::size_t cols = static_cast<std::size_t>(scene.grid.n_cols);
    for (std::size_t gi = 0; gi < s.projected.size(); ++gi) {
        const BevGaussian2D& g = s.projected[gi];
        const CellBounds r = cell_bounds(g, scene.grid);
        if (r.empty) continue;
        for (int row = r.row_lo; row <= r.row_hi; ++row) {
            const double dr = (row + 0.5) - g.mu_row();
            for (int col = r.col_lo; col <= r.col_hi; ++col) {
                const double dc = (col + 0.5) - g.mu_col();
                const double q = g.inv_cov2d(0, 0) * dc * dc + 2.0 * g.inv_cov2d(0, 1) * dc * dr +
                                 g.inv_cov2d(1, 1) * dr * dr;
                if (!(q <= k_sq)) continue;
                ev.coverage_signature ^=
                    mix_hash((static_cast<std::uint64_t>(gi) << 32) ^
                             (static_cast<std::uint64_t>(row) * cols + col));
            }
        }
    }
    return ev;
}

GradBuffers full_chain_backward(const GradCheckScene& scene) {
    const ChainState s = run_chain(scene);
    const std::size_t n = s.gaussians.size();

    const SplatGrads sg =
        splat_backward(s.projected, s.gaussians.features, scene.grid, scene.k, scene.d_out);

    GradBuffers out;
    out.d_features = sg.d_features;
    out.d_opacity_logits = Tensor::zeros(scene.opacity_logits.dims(), Dtype::f64);
    out.d_mu3d = Tensor::zeros({n, 3}, Dtype::f64);
    out.d_cov3d = Tensor::zeros({n, 3, 3}, Dtype::f64);

    const double scale_row = scene.grid.scale_row();
    const double scale_col = scene.grid.scale_col();
    for (std::size_t i = 0; i < n; ++i) {
        const double alpha = s.gaussians.opacity.at(i);
        out.d_opacity_logits.set(i, sg.d_opacity.at(i) * alpha * (1.0 - alpha));

        out.d_mu3d.set(i * 3 + 0, sg.d_mu2d.at(i * 2 + 1) * scale_row);
        out.d_mu3d.set(i * 3 + 1, sg.d_mu2d.at(i * 2 + 0) * scale_col);

        Mat2 d_cov2d;
        d_cov2d(0, 0) = sg.d_cov2d.at(i * 4 + 0);
        d_cov2d(0, 1) = sg.d_cov2d.at(i * 4 + 1);
        d_cov2d(1, 0) = sg.d_cov2d.at(i * 4 + 2);
        d_cov2d(1, 1) = sg.d_cov2d.at(i * 4 + 3);
        const Mat2 d_xy = bev_projection_backward(d_cov2d, scale_row, scale_col);
        out.d_cov3d.set(i * 9 + 0, d_xy(0, 0));
        out.d_cov3d.set(i * 9 + 1, d_xy(0, 1));
        out.d_cov3d.set(i * 9 + 3, d_xy(1, 0));
        out.d_cov3d.set(i * 9 + 4, d_xy(1, 1));
    }

    const Tensor d_probs = moments_backward(s.dist, s.frustum, out.d_mu3d, out.d_cov3d);
    out.d_depth_logits = softmax_backward(s.dist, d_probs);
    return out;
}

double GradCheckReport::max_rel_err() const {
    return std::max({features.max_rel_err, opacity_logits.max_rel_err, depth_logits.max_rel_err});
}

std::size_t GradCheckReport::total_excluded() const {
    return features.excluded + opacity_logits.excluded + depth_logits.excluded;
}

// Small enough that the h^2 truncation term meets each dtype's contract,
// large enough that input-quantization noise stays subdominant.
double default_fd_step(Dtype dtype) { return dtype == Dtype::f32 ? 1e-3 : 1e-4; }

GradCheckReport grad_check(const GradCheckSpec& spec, double h) {
    GradCheckScene scene = make_grad_check_scene(spec);
    return grad_check_scene(scene, h);
}

GradCheckReport grad_check_scene(GradCheckScene& scene, double h) {
    const GradBuffers analytic = full_chain_backward(scene);
    const std::size_t pixels = scene.opacity_logits.size();
    const std::size_t channels = scene.features.dim(0);

    struct GroupRun {
        Tensor* params;
        std::function<double(std::size_t)> analytic_at;
        GradGroupReport* report;
    };
    GradCheckReport report;
    // d_features is stored N x C for the assembled set; the scene parameter
    // tensor is C x H' x W', so remap indices when comparing.
    GroupRun groups[3] = {
        {&scene.features,
         [&](std::size_t i) {
             const std::size_t ch = i / pixels;
             const std::size_t p = i % pixels;
             return analytic.d_features.at(p * channels + ch);
         },
         &report.features},
        {&scene.opacity_logits,
         [&](std::size_t i) { return analytic.d_opacity_logits.at(i); },
         &report.opacity_logits},
        {&scene.depth_logits,
         [&](std::size_t i) { return analytic.d_depth_logits.at(i); },
         &report.depth_logits},
    };

    for (auto& group : groups) {
        // Group scale anchors relative error so noise on near-zero entries is
        // judged against the group's dominant gradient magnitude.
        double group_scale = 0.0;
        for (std::size_t i = 0; i < group.params->size(); ++i)
            group_scale = std::max(group_scale, std::abs(group.analytic_at(i)));

        double err_sum = 0.0;
        std::size_t counted = 0;
        for (std::size_t i = 0; i < group.params->size(); ++i) {
            const double saved = group.params->at(i);
            const double step = h * std::max(1.0, std::abs(saved));

            group.params->set(i, saved + step);
            const LossEval plus = full_chain_loss(scene);
            group.params->set(i, saved - step);
            const LossEval minus = full_chain_loss(scene);
            group.params->set(i, saved);

            if (plus.coverage_signature != minus.coverage_signature) {
                ++group.report->excluded;
                continue;
            }
            const double fd = (plus.loss - minus.loss) / (2.0 * step);
            const double an = group.analytic_at(i);
            const double denom =
                std::max({std::abs(an), std::abs(fd), group_scale, 1e-300});
            const double rel = std::abs(an - fd) / denom;
            group.report->max_rel_err = std::max(group.report->max_rel_err, rel);
            err_sum += rel;
            ++counted;
        }
        group.report->entries = counted;
        group.report->mean_rel_err = counted ? err_sum / static_cast<double>(counted) : 0.0;
    }
    return report;
}

}  // namespace bevsplat
