#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "bevsplat/bev.hpp"
#include "bevsplat/gradients.hpp"
#include "bevsplat/parallel.hpp"
#include "bevsplat/rng.hpp"

using namespace bevsplat;

namespace {

struct Scene {
    std::vector<BevGaussian2D> gaussians;
    Tensor features;
    Tensor d_out;
};

Scene random_splat_scene(Rng& rng, std::size_t n, std::size_t channels, const BevGrid& grid,
                         double k) {
    Scene s;
    s.features = Tensor::zeros({n, channels}, Dtype::f64);
    for (std::size_t i = 0; i < s.features.size(); ++i) s.features.set(i, rng.normal());
    s.d_out = Tensor::zeros({channels, static_cast<std::size_t>(grid.n_rows),
                             static_cast<std::size_t>(grid.n_cols)},
                            Dtype::f64);
    for (std::size_t i = 0; i < s.d_out.size(); ++i) s.d_out.set(i, rng.normal());
    for (std::size_t i = 0; i < n; ++i) {
        const double theta = rng.uniform(0.0, 2.0 * M_PI);
        const double s1 = rng.uniform(0.6, 2.0), s2 = rng.uniform(0.6, 2.0);
        const double c = std::cos(theta), sn = std::sin(theta);
        BevGaussian2D g;
        g.cov2d(0, 0) = c * c * s1 * s1 + sn * sn * s2 * s2 + 0.3;
        g.cov2d(0, 1) = g.cov2d(1, 0) = c * sn * (s1 * s1 - s2 * s2);
        g.cov2d(1, 1) = sn * sn * s1 * s1 + c * c * s2 * s2 + 0.3;
        g.inv_cov2d = g.cov2d.inverse();
        g.mu2d = {rng.uniform(2.0, grid.n_cols - 2.0), rng.uniform(2.0, grid.n_rows - 2.0)};
        g.opacity = rng.uniform(0.1, 0.9);
        g.feature_index = static_cast<int>(i);
        g.cull_radius = k * std::sqrt(g.cov2d.sym_eigenvalues()[0]) + 0.5;
        s.gaussians.push_back(g);
    }
    return s;
}

double splat_loss(const Scene& s, const BevGrid& grid, double k) {
    const BevFeatureMap map = splat_forward(s.gaussians, s.features, grid, k, Dtype::f64);
    double loss = 0.0;
    for (std::size_t i = 0; i < map.values.size(); ++i) loss += map.values.at(i) * s.d_out.at(i);
    return loss;
}

/// Order-independent hash of the set of (gaussian, cell) pairs inside the
/// truncation cutoff; finite differences are invalid when a perturbation
/// flips this set, because the kernel is discontinuous at m = k.
std::uint64_t coverage_signature(const Scene& s, const BevGrid& grid, double k) {
    std::uint64_t sig = 0;
    const double k_sq = k * k;
    for (std::size_t gi = 0; gi < s.gaussians.size(); ++gi) {
        const BevGaussian2D& g = s.gaussians[gi];
        for (int row = 0; row < grid.n_rows; ++row)
            for (int col = 0; col < grid.n_cols; ++col) {
                const double dc = (col + 0.5) - g.mu_col();
                const double dr = (row + 0.5) - g.mu_row();
                const double q = g.inv_cov2d(0, 0) * dc * dc +
                                 2.0 * g.inv_cov2d(0, 1) * dc * dr + g.inv_cov2d(1, 1) * dr * dr;
                if (q <= k_sq) {
                    std::uint64_t x = (static_cast<std::uint64_t>(gi) << 32) ^
                                      (static_cast<std::uint64_t>(row) * 1024 + col);
                    x ^= x >> 33;
                    x *= 0xff51afd7ed558ccdULL;
                    x ^= x >> 33;
                    sig ^= x;
                }
            }
    }
    return sig;
}

void refresh_derived(BevGaussian2D& g, double k) {
    g.inv_cov2d = g.cov2d.inverse();
    g.cull_radius = k * std::sqrt(g.cov2d.sym_eigenvalues()[0]) + 0.5;
}

}  // namespace

// ---------------------------------------------------------------------------
// splat_backward
// ---------------------------------------------------------------------------

TEST_CASE("cotangent concentrated at the mean gives d_feature = alpha, d_opacity = F") {
    const BevGrid grid(0.0, 16.0, 0.0, 16.0, 16, 16);
    BevGaussian2D g;
    g.mu2d = {8.5, 8.5};  // the center of cell (8, 8)
    g.cov2d = Mat2::identity();
    g.inv_cov2d = Mat2::identity();
    g.opacity = 0.7;
    g.cull_radius = 3.5;
    const Tensor features = Tensor::from_data({1, 1}, {1.25}, Dtype::f64);
    Tensor d_out = Tensor::zeros({1, 16, 16}, Dtype::f64);
    d_out.set({0, 8, 8}, 1.0);

    const SplatGrads grads = splat_backward({g}, features, grid, 3.0, d_out);
    CHECK(grads.d_features.at(0) == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(grads.d_opacity.at(0) == doctest::Approx(1.25).epsilon(1e-12));
    // Kernel is extremal at the mean, so the mean gradient vanishes there.
    CHECK(grads.d_mu2d.at(0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(grads.d_mu2d.at(1) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("zero cotangent gives zero gradients") {
    Rng rng(71);
    const BevGrid grid(0.0, 24.0, 0.0, 24.0, 24, 24);
    Scene s = random_splat_scene(rng, 20, 3, grid, 2.0);
    for (std::size_t i = 0; i < s.d_out.size(); ++i) s.d_out.set(i, 0.0);
    const SplatGrads grads = splat_backward(s.gaussians, s.features, grid, 2.0, s.d_out);
    for (std::size_t i = 0; i < grads.d_features.size(); ++i) CHECK(grads.d_features.at(i) == 0.0);
    for (std::size_t i = 0; i < grads.d_opacity.size(); ++i) CHECK(grads.d_opacity.at(i) == 0.0);
    for (std::size_t i = 0; i < grads.d_mu2d.size(); ++i) CHECK(grads.d_mu2d.at(i) == 0.0);
    for (std::size_t i = 0; i < grads.d_cov2d.size(); ++i) CHECK(grads.d_cov2d.at(i) == 0.0);
}

TEST_CASE("splat gradients match central finite differences") {
    Rng rng(73);
    const double k = 2.0;
    const double h = 1e-3;
    std::size_t boundary_excluded = 0;
    std::size_t checked = 0;
    for (int trial = 0; trial < 10; ++trial) {
        const BevGrid grid(0.0, 24.0, 0.0, 24.0, 24, 24);
        Scene s = random_splat_scene(rng, 12, 2, grid, k);
        const SplatGrads grads = splat_backward(s.gaussians, s.features, grid, k, s.d_out);

        double scale = 0.0;
        for (std::size_t i = 0; i < grads.d_features.size(); ++i)
            scale = std::max(scale, std::abs(grads.d_features.at(i)));
        for (std::size_t i = 0; i < grads.d_mu2d.size(); ++i)
            scale = std::max(scale, std::abs(grads.d_mu2d.at(i)));

        auto rel = [&](double a, double f) {
            return std::abs(a - f) / std::max({std::abs(a), std::abs(f), scale, 1e-12});
        };

        // Features never move the truncation ellipse, so no exclusion needed.
        for (std::size_t i = 0; i < s.features.size(); ++i) {
            const double saved = s.features.at(i);
            const double step = h * std::max(1.0, std::abs(saved));
            s.features.set(i, saved + step);
            const double lp = splat_loss(s, grid, k);
            s.features.set(i, saved - step);
            const double lm = splat_loss(s, grid, k);
            s.features.set(i, saved);
            CHECK(rel(grads.d_features.at(i), (lp - lm) / (2 * step)) < 1e-6);
            ++checked;
        }
        // Opacity, mean, covariance per gaussian; mean and covariance steps
        // can flip cells across the m = k cutoff, which invalidates the FD.
        for (std::size_t gi = 0; gi < s.gaussians.size(); ++gi) {
            BevGaussian2D& g = s.gaussians[gi];
            {
                const double saved = g.opacity;
                const double step = h;
                g.opacity = saved + step;
                const double lp = splat_loss(s, grid, k);
                g.opacity = saved - step;
                const double lm = splat_loss(s, grid, k);
                g.opacity = saved;
                CHECK(rel(grads.d_opacity.at(gi), (lp - lm) / (2 * step)) < 1e-6);
                ++checked;
            }
            for (int axis = 0; axis < 2; ++axis) {
                double* comp = axis == 0 ? &g.mu2d.x : &g.mu2d.y;
                const double saved = *comp;
                const double step = h;
                *comp = saved + step;
                const double lp = splat_loss(s, grid, k);
                const std::uint64_t sig_p = coverage_signature(s, grid, k);
                *comp = saved - step;
                const double lm = splat_loss(s, grid, k);
                const std::uint64_t sig_m = coverage_signature(s, grid, k);
                *comp = saved;
                if (sig_p != sig_m) {
                    ++boundary_excluded;
                    continue;
                }
                const double fd = (lp - lm) / (2 * step);
                CHECK(rel(grads.d_mu2d.at(gi * 2 + static_cast<std::size_t>(axis)), fd) < 2e-6);
                ++checked;
            }
            // Symmetric covariance parameters (a, b, c); the b step moves
            // both off-diagonal slots, so the expected derivative is the sum
            // of the two stored cotangent slots.
            const double expected[3] = {grads.d_cov2d.at(gi * 4 + 0),
                                        grads.d_cov2d.at(gi * 4 + 1) + grads.d_cov2d.at(gi * 4 + 2),
                                        grads.d_cov2d.at(gi * 4 + 3)};
            for (int param = 0; param < 3; ++param) {
                const Mat2 saved = g.cov2d;
                const double step = h;
                Mat2 delta;
                if (param == 0) delta(0, 0) = 1.0;
                if (param == 1) delta(0, 1) = delta(1, 0) = 1.0;
                if (param == 2) delta(1, 1) = 1.0;
                for (int a = 0; a < 2; ++a)
                    for (int b = 0; b < 2; ++b) g.cov2d(a, b) = saved(a, b) + step * delta(a, b);
                refresh_derived(g, k);
                const double lp = splat_loss(s, grid, k);
                const std::uint64_t sig_p = coverage_signature(s, grid, k);
                for (int a = 0; a < 2; ++a)
                    for (int b = 0; b < 2; ++b) g.cov2d(a, b) = saved(a, b) - step * delta(a, b);
                refresh_derived(g, k);
                const double lm = splat_loss(s, grid, k);
                const std::uint64_t sig_m = coverage_signature(s, grid, k);
                g.cov2d = saved;
                refresh_derived(g, k);
                if (sig_p != sig_m) {
                    ++boundary_excluded;
                    continue;
                }
                const double fd = (lp - lm) / (2 * step);
                CHECK(rel(expected[param], fd) < 1e-5);
                ++checked;
            }
        }
    }
    // The scenes are dense enough that some entries sit on the cutoff; both
    // populations must be non-trivial for the test to mean anything.
    CHECK(checked > 500);
    CHECK(boundary_excluded > 0);
}

TEST_CASE("backward gradients are bit-identical across thread counts") {
    Rng rng(101);
    const BevGrid grid(0.0, 48.0, 0.0, 48.0, 48, 48);
    const Scene s = random_splat_scene(rng, 300, 3, grid, 2.0);
    set_thread_cap(1);
    const SplatGrads a = splat_backward(s.gaussians, s.features, grid, 2.0, s.d_out);
    set_thread_cap(4);
    const SplatGrads b = splat_backward(s.gaussians, s.features, grid, 2.0, s.d_out);
    set_thread_cap(0);
    CHECK(a.d_features.bit_equal(b.d_features));
    CHECK(a.d_opacity.bit_equal(b.d_opacity));
    CHECK(a.d_mu2d.bit_equal(b.d_mu2d));
    CHECK(a.d_cov2d.bit_equal(b.d_cov2d));
}

TEST_CASE("backward is linear in the cotangent") {
    Rng rng(97);
    const BevGrid grid(0.0, 24.0, 0.0, 24.0, 24, 24);
    Scene s = random_splat_scene(rng, 15, 2, grid, 2.0);
    Tensor d2 = Tensor::zeros(s.d_out.dims(), Dtype::f64);
    for (std::size_t i = 0; i < d2.size(); ++i) d2.set(i, rng.normal());
    Tensor dsum = Tensor::zeros(s.d_out.dims(), Dtype::f64);
    for (std::size_t i = 0; i < dsum.size(); ++i) dsum.set(i, s.d_out.at(i) + d2.at(i));

    const SplatGrads a = splat_backward(s.gaussians, s.features, grid, 2.0, s.d_out);
    const SplatGrads b = splat_backward(s.gaussians, s.features, grid, 2.0, d2);
    const SplatGrads ab = splat_backward(s.gaussians, s.features, grid, 2.0, dsum);
    for (std::size_t i = 0; i < ab.d_features.size(); ++i)
        CHECK(std::abs(ab.d_features.at(i) - (a.d_features.at(i) + b.d_features.at(i))) < 1e-7);
    for (std::size_t i = 0; i < ab.d_opacity.size(); ++i)
        CHECK(std::abs(ab.d_opacity.at(i) - (a.d_opacity.at(i) + b.d_opacity.at(i))) < 1e-7);
    for (std::size_t i = 0; i < ab.d_mu2d.size(); ++i)
        CHECK(std::abs(ab.d_mu2d.at(i) - (a.d_mu2d.at(i) + b.d_mu2d.at(i))) < 1e-7);
    for (std::size_t i = 0; i < ab.d_cov2d.size(); ++i)
        CHECK(std::abs(ab.d_cov2d.at(i) - (a.d_cov2d.at(i) + b.d_cov2d.at(i))) < 1e-7);
}

// ---------------------------------------------------------------------------
// bev_projection_backward
// ---------------------------------------------------------------------------

TEST_CASE("projection backward reproduces the scaling formulas") {
    // d_a = 1, scale_col = 2: only the ego y/y slot receives scale_col^2.
    Mat2 d_a_only;
    d_a_only(0, 0) = 1.0;
    const Mat2 out = bev_projection_backward(d_a_only, 3.0, 2.0);
    CHECK(out(0, 0) == 0.0);
    CHECK(out(0, 1) == 0.0);
    CHECK(out(1, 0) == 0.0);
    CHECK(out(1, 1) == 4.0);

    // d_b = 1, scales (row, col) = (3, 2): off-diagonals get 6.
    Mat2 d_b_only;
    d_b_only(0, 1) = d_b_only(1, 0) = 1.0;
    const Mat2 out_b = bev_projection_backward(d_b_only, 3.0, 2.0);
    CHECK(out_b(0, 0) == 0.0);
    CHECK(out_b(0, 1) == 6.0);
    CHECK(out_b(1, 0) == 6.0);
    CHECK(out_b(1, 1) == 0.0);

    Mat2 d_c_only;
    d_c_only(1, 1) = 1.0;
    const Mat2 out_c = bev_projection_backward(d_c_only, 3.0, 2.0);
    CHECK(out_c(0, 0) == 9.0);
    CHECK(out_c(1, 1) == 0.0);
}

TEST_CASE("projection backward equals the transposed-scaling product on random cotangents") {
    Rng rng(79);
    for (int trial = 0; trial < 1000; ++trial) {
        const double scale_row = rng.uniform(0.5, 8.0);
        const double scale_col = rng.uniform(0.5, 8.0);
        Mat2 g;
        g(0, 0) = rng.normal();
        g(1, 1) = rng.normal();
        g(0, 1) = g(1, 0) = rng.normal();

        // Reference: dL/dM = S^T G S for the linear map M -> S M S^T.
        Mat2 s_bev;
        s_bev(0, 1) = scale_col;
        s_bev(1, 0) = scale_row;
        const Mat2 reference = s_bev.transposed() * g * s_bev;
        const Mat2 got = bev_projection_backward(g, scale_row, scale_col);
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b)
                CHECK(std::abs(got(a, b) - reference(a, b)) <=
                      1e-12 * std::max(1.0, std::abs(reference(a, b))));
    }
}

TEST_CASE("projection backward is unchanged when the cotangent is symmetrized") {
    Rng rng(37);
    for (int trial = 0; trial < 50; ++trial) {
        Mat2 g;
        g(0, 0) = rng.normal();
        g(0, 1) = rng.normal();
        g(1, 0) = rng.normal();
        g(1, 1) = rng.normal();
        Mat2 sym;
        sym(0, 0) = g(0, 0);
        sym(1, 1) = g(1, 1);
        sym(0, 1) = sym(1, 0) = 0.5 * (g(0, 1) + g(1, 0));
        const double sr = rng.uniform(0.5, 4.0), sc = rng.uniform(0.5, 4.0);
        const Mat2 a = bev_projection_backward(g, sr, sc);
        const Mat2 b = bev_projection_backward(sym, sr, sc);
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) CHECK(std::abs(a(i, j) - b(i, j)) < 1e-7);
    }
}

TEST_CASE("projection backward matches finite differences of project_to_bev") {
    Rng rng(83);
    const BevGrid grid(-12.0, 20.0, -8.0, 8.0, 64, 128);
    const double h = 1e-5;
    for (int trial = 0; trial < 20; ++trial) {
        Mat3 cov;
        const double theta = rng.uniform(0.0, 2.0 * M_PI);
        const double s1 = rng.uniform(0.3, 2.0), s2 = rng.uniform(0.3, 2.0);
        const double c = std::cos(theta), sn = std::sin(theta);
        cov(0, 0) = c * c * s1 * s1 + sn * sn * s2 * s2;
        cov(0, 1) = cov(1, 0) = c * sn * (s1 * s1 - s2 * s2);
        cov(1, 1) = sn * sn * s1 * s1 + c * c * s2 * s2;
        cov(2, 2) = 0.2;

        Mat2 g;  // symmetric cotangent on the projected covariance
        g(0, 0) = rng.normal();
        g(1, 1) = rng.normal();
        g(0, 1) = g(1, 0) = rng.normal();

        auto loss = [&](const Mat3& m) {
            const BevGaussian2D proj = project_to_bev({0, 0, 0}, m, grid, 1.0, 0.0);
            double l = 0.0;
            for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b) l += g(a, b) * proj.cov2d(a, b);
            return l;
        };
        const Mat2 analytic = bev_projection_backward(g, grid.scale_row(), grid.scale_col());

        // Diagonal entries are independent parameters; the off-diagonal is
        // one parameter living in both slots.
        for (int param = 0; param < 3; ++param) {
            Mat3 plus = cov, minus = cov;
            double expected;
            if (param == 0) {
                plus(0, 0) += h;
                minus(0, 0) -= h;
                expected = analytic(0, 0);
            } else if (param == 1) {
                plus(0, 1) += h;
                plus(1, 0) += h;
                minus(0, 1) -= h;
                minus(1, 0) -= h;
                expected = analytic(0, 1) + analytic(1, 0);
            } else {
                plus(1, 1) += h;
                minus(1, 1) -= h;
                expected = analytic(1, 1);
            }
            const double fd = (loss(plus) - loss(minus)) / (2 * h);
            CHECK(std::abs(fd - expected) < 1e-6 * std::max(1.0, std::abs(expected)));
        }
    }
}

// ---------------------------------------------------------------------------
// moments_backward / softmax_backward
// ---------------------------------------------------------------------------

TEST_CASE("zero cotangents give zero logit gradients") {
    GradCheckSpec spec;
    spec.seed = 5;
    GradCheckScene scene = make_grad_check_scene(spec);
    const DepthDistribution dist = softmax_depth(scene.depth_logits);
    const Frustum frustum = build_frustum(scene.camera, scene.bins, 1, 0, Dtype::f64);
    const std::size_t n = dist.rows() * dist.cols();
    const Tensor d_probs = moments_backward(dist, frustum, Tensor::zeros({n, 3}, Dtype::f64),
                                            Tensor::zeros({n, 3, 3}, Dtype::f64));
    for (std::size_t i = 0; i < d_probs.size(); ++i) CHECK(d_probs.at(i) == 0.0);
    const Tensor d_logits = softmax_backward(dist, d_probs);
    for (std::size_t i = 0; i < d_logits.size(); ++i) CHECK(d_logits.at(i) == 0.0);
}

TEST_CASE("moment gradients match finite differences through the softmax") {
    Rng rng(89);
    GradCheckSpec spec;
    spec.rows = 2;
    spec.cols = 3;
    spec.bins = 6;
    spec.seed = 11;
    GradCheckScene scene = make_grad_check_scene(spec);
    const Frustum frustum = build_frustum(scene.camera, scene.bins, 1, 0, Dtype::f64);
    const std::size_t pixels = 6;

    Tensor d_mu3d = Tensor::zeros({pixels, 3}, Dtype::f64);
    Tensor d_cov3d = Tensor::zeros({pixels, 3, 3}, Dtype::f64);
    for (std::size_t i = 0; i < d_mu3d.size(); ++i) d_mu3d.set(i, rng.normal());
    for (std::size_t i = 0; i < d_cov3d.size(); ++i) d_cov3d.set(i, rng.normal());

    auto loss = [&](const Tensor& logits) {
        const DepthDistribution dist = softmax_depth(logits);
        const auto [mu3d, cov3d] = moments_3d(dist, frustum);
        double l = 0.0;
        for (std::size_t i = 0; i < mu3d.size(); ++i) l += mu3d.at(i) * d_mu3d.at(i);
        for (std::size_t i = 0; i < cov3d.size(); ++i) l += cov3d.at(i) * d_cov3d.at(i);
        return l;
    };

    const DepthDistribution dist = softmax_depth(scene.depth_logits);
    const Tensor d_probs = moments_backward(dist, frustum, d_mu3d, d_cov3d);
    const Tensor d_logits = softmax_backward(dist, d_probs);

    const double h = 1e-5;
    double scale = 0.0;
    for (std::size_t i = 0; i < d_logits.size(); ++i)
        scale = std::max(scale, std::abs(d_logits.at(i)));
    for (std::size_t i = 0; i < scene.depth_logits.size(); ++i) {
        const double saved = scene.depth_logits.at(i);
        scene.depth_logits.set(i, saved + h);
        const double lp = loss(scene.depth_logits);
        scene.depth_logits.set(i, saved - h);
        const double lm = loss(scene.depth_logits);
        scene.depth_logits.set(i, saved);
        const double fd = (lp - lm) / (2 * h);
        CHECK(std::abs(fd - d_logits.at(i)) <
              1e-6 * std::max({1.0, scale, std::abs(fd)}));
    }
}

TEST_CASE("strongly one-hot distributions have vanishing logit gradients") {
    GradCheckSpec spec;
    spec.rows = 1;
    spec.cols = 1;
    spec.bins = 5;
    GradCheckScene scene = make_grad_check_scene(spec);
    Tensor logits = Tensor::zeros({5, 1, 1}, Dtype::f64);
    logits.set(2, 25.0);
    const DepthDistribution dist = softmax_depth(logits);
    const Frustum frustum = build_frustum(scene.camera, scene.bins, 1, 0, Dtype::f64);
    Tensor d_mu3d = Tensor::from_data({1, 3}, {1.0, -2.0, 0.5}, Dtype::f64);
    Tensor d_cov3d = Tensor::zeros({1, 3, 3}, Dtype::f64);
    d_cov3d.set(0, 1.0);
    const Tensor d_logits =
        softmax_backward(dist, moments_backward(dist, frustum, d_mu3d, d_cov3d));
    for (std::size_t i = 0; i < d_logits.size(); ++i) CHECK(std::abs(d_logits.at(i)) < 1e-6);
}

TEST_CASE("uniform distribution on a symmetric ray gives symmetric logit gradients") {
    // Pixel ray along ego x with evenly spaced bins: a pure covariance
    // cotangent is an even function of the distance to the mean.
    Mat3 intr = Mat3::identity();
    intr(0, 2) = 0.5;
    intr(1, 2) = 0.5;
    Mat3 rot;  // camera z -> ego x, camera x -> -ego y, camera y -> -ego z
    rot(0, 2) = 1.0;
    rot(1, 0) = -1.0;
    rot(2, 1) = -1.0;
    const CameraModel cam(intr, Mat4::from_rt(rot.transposed(), {0, 0, 0}), 1, 1);
    const DepthBinning bins = make_bins(1.0, 9.0, 8);
    const Frustum frustum = build_frustum(cam, bins, 1, 0, Dtype::f64);

    DepthDistribution dist;
    dist.probs = Tensor::zeros({8, 1, 1}, Dtype::f64);
    for (std::size_t b = 0; b < 8; ++b) dist.probs.set(b, 0.125);
    dist.logits = Tensor::zeros({8, 1, 1}, Dtype::f64);

    Tensor d_mu3d = Tensor::zeros({1, 3}, Dtype::f64);
    Tensor d_cov3d = Tensor::zeros({1, 3, 3}, Dtype::f64);
    d_cov3d.set(0, 1.0);  // x/x covariance cotangent only
    const Tensor d_logits =
        softmax_backward(dist, moments_backward(dist, frustum, d_mu3d, d_cov3d));
    for (std::size_t b = 0; b < 4; ++b)
        CHECK(d_logits.at(b) == doctest::Approx(d_logits.at(7 - b)).epsilon(1e-10));
}

// ---------------------------------------------------------------------------
// grad_check (full chain)
// ---------------------------------------------------------------------------

TEST_CASE("single-gaussian scene passes the f64 gradient check") {
    GradCheckSpec spec;
    spec.rows = 1;
    spec.cols = 1;
    spec.bins = 6;
    spec.channels = 2;
    spec.seed = 3;
    const GradCheckReport r = grad_check(spec, default_fd_step(Dtype::f64));
    CHECK(r.max_rel_err() <= 1e-6);
}

TEST_CASE("random small scenes pass the gradient check at both precisions") {
    for (std::uint64_t seed = 20; seed < 25; ++seed) {
        GradCheckSpec spec;
        spec.seed = seed;
        spec.dtype = Dtype::f64;
        CHECK(grad_check(spec, default_fd_step(Dtype::f64)).max_rel_err() <= 1e-6);
        spec.dtype = Dtype::f32;
        CHECK(grad_check(spec, default_fd_step(Dtype::f32)).max_rel_err() <= 1e-3);
    }
}

TEST_CASE("zero-loss scene reports exactly zero error") {
    GradCheckSpec spec;
    spec.seed = 9;
    GradCheckScene scene = make_grad_check_scene(spec);
    for (std::size_t i = 0; i < scene.d_out.size(); ++i) scene.d_out.set(i, 0.0);
    const GradCheckReport r = grad_check_scene(scene, 1e-4);
    CHECK(r.max_rel_err() == 0.0);
    CHECK(r.features.entries > 0);
}

TEST_CASE("coarse steps near the truncation boundary are detected and excluded") {
    // A large step makes some cell cross the m = k cutoff between the two
    // sides of the central difference; those entries must be counted.
    std::size_t excluded = 0;
    for (std::uint64_t seed = 40; seed < 44; ++seed) {
        GradCheckSpec spec;
        spec.seed = seed;
        spec.k = 1.0;
        excluded += grad_check(spec, 0.05).total_excluded();
    }
    CHECK(excluded > 0);
}
