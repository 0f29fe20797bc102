#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "bevsplat/bev.hpp"
#include "bevsplat/parallel.hpp"
#include "bevsplat/rng.hpp"

using namespace bevsplat;

namespace {

Mat3 random_spd_cov3d(Rng& rng, double scale = 1.5) {
    // Random rank-2 SPD block in x/y plus a small z variance.
    const double theta = rng.uniform(0.0, 2.0 * M_PI);
    const double s1 = rng.uniform(0.1, scale);
    const double s2 = rng.uniform(0.1, scale);
    const double c = std::cos(theta), s = std::sin(theta);
    Mat3 m;
    m(0, 0) = c * c * s1 * s1 + s * s * s2 * s2;
    m(0, 1) = c * s * (s1 * s1 - s2 * s2);
    m(1, 0) = m(0, 1);
    m(1, 1) = s * s * s1 * s1 + c * c * s2 * s2;
    m(2, 2) = rng.uniform(0.01, 0.5);
    return m;
}

/// Generic 2x2 triple product oracle: S * M * S^T with plain loops.
Mat2 matmul_oracle(const Mat2& s, const Mat2& m) {
    Mat2 t;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 2; ++k) acc += s(i, k) * m(k, j);
            t(i, j) = acc;
        }
    Mat2 out;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 2; ++k) acc += t(i, k) * s(j, k);
            out(i, j) = acc;
        }
    return out;
}

struct Scene {
    std::vector<BevGaussian2D> gaussians;
    Tensor features;
};

Scene random_scene(Rng& rng, std::size_t n, std::size_t channels, const BevGrid& grid, double k,
                   double eps = 0.3) {
    Scene s;
    s.features = Tensor::zeros({n, channels});
    for (std::size_t i = 0; i < s.features.size(); ++i) s.features.set(i, rng.uniform(-1.0, 1.0));
    s.gaussians.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3 mu{rng.uniform(grid.x_min - 2.0, grid.x_max + 2.0),
                      rng.uniform(grid.y_min - 2.0, grid.y_max + 2.0), rng.uniform(0.0, 2.0)};
        BevGaussian2D g =
            project_to_bev(mu, random_spd_cov3d(rng), grid, k, eps, static_cast<int>(i));
        g.opacity = rng.uniform(0.02, 1.0);
        s.gaussians.push_back(g);
    }
    return s;
}

double max_abs_diff(const BevFeatureMap& a, const BevFeatureMap& b) {
    double worst = 0.0;
    REQUIRE(a.values.dims() == b.values.dims());
    for (std::size_t i = 0; i < a.values.size(); ++i)
        worst = std::max(worst, std::abs(a.values.at(i) - b.values.at(i)));
    for (std::size_t i = 0; i < a.weight.size(); ++i)
        worst = std::max(worst, std::abs(a.weight.at(i) - b.weight.at(i)));
    return worst;
}

}  // namespace

// ---------------------------------------------------------------------------
// project_to_bev
// ---------------------------------------------------------------------------

TEST_CASE("projected covariance applies the axis-swapped scaling") {
    // 2 cells per meter on both axes.
    const BevGrid grid(-50.0, 50.0, -50.0, 50.0, 200, 200);
    REQUIRE(grid.scale_row() == 2.0);
    Mat3 cov;
    cov(0, 0) = 2.0;  // ego x variance
    cov(1, 1) = 3.0;  // ego y variance
    const BevGaussian2D g = project_to_bev({0, 0, 0}, cov, grid, 1.0, 0.0);
    CHECK(g.cov2d(0, 0) == 12.0);  // y variance * scale_col^2
    CHECK(g.cov2d(0, 1) == 0.0);
    CHECK(g.cov2d(1, 0) == 0.0);
    CHECK(g.cov2d(1, 1) == 8.0);  // x variance * scale_row^2
}

TEST_CASE("grid-center mean maps to cell (100, 100) on the default extent") {
    const BevGrid grid(-50.0, 50.0, -50.0, 50.0, 200, 200);
    const BevGaussian2D g = project_to_bev({0, 0, 1.7}, Mat3::identity(), grid, 1.0, 0.0);
    CHECK(g.mu_row() == 100.0);
    CHECK(g.mu_col() == 100.0);
}

TEST_CASE("projection equals the generic scaling-matrix product exactly") {
    Rng rng(41);
    const BevGrid grid(-32.0, 32.0, -20.0, 44.0, 160, 256);
    Mat2 s_bev;
    s_bev(0, 1) = grid.scale_col();
    s_bev(1, 0) = grid.scale_row();
    for (int trial = 0; trial < 500; ++trial) {
        const Mat3 cov = random_spd_cov3d(rng, 3.0);
        const BevGaussian2D g = project_to_bev({rng.uniform(-30.0, 30.0), rng.uniform(-18.0, 40.0),
                                                0.0},
                                               cov, grid, 1.0, 0.0);
        Mat2 xy;
        xy(0, 0) = cov(0, 0);
        xy(0, 1) = cov(0, 1);
        xy(1, 0) = cov(1, 0);
        xy(1, 1) = cov(1, 1);
        const Mat2 oracle = matmul_oracle(s_bev, xy);
        CHECK(g.cov2d(0, 0) == oracle(0, 0));
        CHECK(g.cov2d(0, 1) == oracle(0, 1));
        CHECK(g.cov2d(1, 1) == oracle(1, 1));
    }
}

TEST_CASE("regularization makes the inverse well conditioned") {
    const BevGrid grid(-10.0, 10.0, -10.0, 10.0, 40, 40);
    Mat3 cov;  // rank-1: variance along x only
    cov(0, 0) = 4.0;
    const BevGaussian2D g = project_to_bev({0, 0, 0}, cov, grid, 2.0, 1e-4);
    CHECK(g.cov2d.det() > 0.0);
    const Mat2 prod = g.inv_cov2d * g.cov2d;
    CHECK(std::abs(prod(0, 0) - 1.0) < 1e-4);
    CHECK(std::abs(prod(1, 1) - 1.0) < 1e-4);
    CHECK(std::abs(prod(0, 1)) < 1e-4);
    CHECK(std::abs(prod(1, 0)) < 1e-4);
    // cull radius = k * sqrt(largest eigenvalue) + 0.5
    const double lam = g.cov2d.sym_eigenvalues()[0];
    CHECK(g.cull_radius == doctest::Approx(2.0 * std::sqrt(lam) + 0.5).epsilon(1e-12));

    Mat3 bad;
    bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS(project_to_bev({0, 0, 0}, bad, grid, 1.0, 0.0));
}

// ---------------------------------------------------------------------------
// splat_forward / splat_oracle
// ---------------------------------------------------------------------------

TEST_CASE("unit gaussian at a cell center has kernel 1 there and exp(-1/2) at m=1") {
    const BevGrid grid(0.0, 32.0, 0.0, 32.0, 32, 32);
    BevGaussian2D g;
    g.mu2d = {10.5, 10.5};
    g.cov2d = Mat2::identity();
    g.inv_cov2d = Mat2::identity();
    g.opacity = 1.0;
    g.feature_index = 0;
    g.cull_radius = 3.5;
    const Tensor features = Tensor::from_data({1, 1}, {1.0});

    const BevFeatureMap map = splat_forward({g}, features, grid, 3.0, Dtype::f64);
    CHECK(map.values.at({0, 10, 10}) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(map.values.at({0, 10, 11}) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
    CHECK(map.values.at({0, 11, 10}) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
    CHECK(map.weight.at({10, 10}) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("contributions beyond the Mahalanobis cutoff are exactly zero") {
    const BevGrid grid(0.0, 32.0, 0.0, 32.0, 32, 32);
    BevGaussian2D g;
    g.mu2d = {10.5, 10.5};
    g.cov2d = Mat2::identity();
    g.inv_cov2d = Mat2::identity();
    g.opacity = 1.0;
    g.cull_radius = 1.5;
    const Tensor features = Tensor::from_data({1, 1}, {1.0});

    const BevFeatureMap map = splat_forward({g}, features, grid, 0.5, Dtype::f64);
    CHECK(map.values.at({0, 10, 10}) == 1.0);  // m = 0
    CHECK(map.values.at({0, 10, 11}) == 0.0);  // m = 1 > 0.5
    CHECK(map.values.at({0, 11, 11}) == 0.0);
    const BevFeatureMap oracle = splat_oracle({g}, features, grid, 0.5);
    CHECK(max_abs_diff(map, oracle) == 0.0);
}

TEST_CASE("tiled renderer matches the brute-force oracle") {
    Rng rng(43);
    for (int trial = 0; trial < 4; ++trial) {
        const int res = 48 + 16 * trial;
        const BevGrid grid(-12.0, 12.0, -12.0, 12.0, res, res);
        const Scene s = random_scene(rng, 1500, 3, grid, 2.0);
        const BevFeatureMap tiled = splat_forward(s.gaussians, s.features, grid, 2.0, Dtype::f32);
        const BevFeatureMap oracle = splat_oracle(s.gaussians, s.features, grid, 2.0);
        CHECK(max_abs_diff(tiled, oracle) <= 1e-4);
    }
}

TEST_CASE("empty scene and fully culled gaussians render zero maps") {
    const BevGrid grid(0.0, 16.0, 0.0, 16.0, 16, 16);
    const Tensor features = Tensor::from_data({1, 1}, {1.0});
    const BevFeatureMap empty = splat_oracle({}, features, grid, 1.0);
    for (std::size_t i = 0; i < empty.values.size(); ++i) CHECK(empty.values.at(i) == 0.0);

    BevGaussian2D g;
    g.mu2d = {500.0, 500.0};  // far off-grid
    g.cov2d = Mat2::identity();
    g.inv_cov2d = Mat2::identity();
    g.opacity = 1.0;
    g.cull_radius = 2.0;
    const BevFeatureMap far_map = splat_forward({g}, features, grid, 1.0, Dtype::f64);
    const BevFeatureMap far_oracle = splat_oracle({g}, features, grid, 1.0);
    for (std::size_t i = 0; i < far_map.values.size(); ++i) {
        CHECK(far_map.values.at(i) == 0.0);
        CHECK(far_oracle.values.at(i) == 0.0);
    }
}

TEST_CASE("oracle is linear in the features") {
    Rng rng(47);
    const BevGrid grid(-8.0, 8.0, -8.0, 8.0, 32, 32);
    Scene s = random_scene(rng, 60, 2, grid, 2.0);
    Tensor f1 = s.features;
    Tensor f2 = Tensor::zeros(f1.dims());
    for (std::size_t i = 0; i < f2.size(); ++i) f2.set(i, rng.uniform(-1.0, 1.0));
    Tensor fsum = Tensor::zeros(f1.dims());
    for (std::size_t i = 0; i < fsum.size(); ++i) fsum.set(i, f1.at(i) + f2.at(i));

    const BevFeatureMap m1 = splat_oracle(s.gaussians, f1, grid, 2.0);
    const BevFeatureMap m2 = splat_oracle(s.gaussians, f2, grid, 2.0);
    const BevFeatureMap msum = splat_oracle(s.gaussians, fsum, grid, 2.0);
    for (std::size_t i = 0; i < msum.values.size(); ++i)
        CHECK(msum.values.at(i) == doctest::Approx(m1.values.at(i) + m2.values.at(i)).epsilon(1e-6));
}

TEST_CASE("output scales linearly with opacity") {
    Rng rng(53);
    const BevGrid grid(-8.0, 8.0, -8.0, 8.0, 40, 40);
    Scene s = random_scene(rng, 80, 2, grid, 2.0);
    const BevFeatureMap base = splat_forward(s.gaussians, s.features, grid, 2.0, Dtype::f64);
    Scene scaled = s;
    for (auto& g : scaled.gaussians) g.opacity *= 0.375;
    const BevFeatureMap out = splat_forward(scaled.gaussians, scaled.features, grid, 2.0, Dtype::f64);
    for (std::size_t i = 0; i < out.values.size(); ++i)
        CHECK(out.values.at(i) == doctest::Approx(0.375 * base.values.at(i)).epsilon(1e-6));
}

TEST_CASE("coverage grows monotonically with k for non-negative features") {
    Rng rng(59);
    const BevGrid grid(-8.0, 8.0, -8.0, 8.0, 32, 32);
    Scene s = random_scene(rng, 50, 1, grid, 3.0);
    for (std::size_t i = 0; i < s.features.size(); ++i)
        s.features.set(i, std::abs(s.features.at(i)));
    const BevFeatureMap small_k = splat_forward(s.gaussians, s.features, grid, 0.8, Dtype::f64);
    const BevFeatureMap large_k = splat_forward(s.gaussians, s.features, grid, 2.5, Dtype::f64);
    for (std::size_t i = 0; i < small_k.values.size(); ++i)
        CHECK(small_k.values.at(i) <= large_k.values.at(i) + 1e-12);
}

TEST_CASE("rotating the scene by 90 degrees permutes the map") {
    Rng rng(61);
    const int res = 40;
    const BevGrid grid(-10.0, 10.0, -10.0, 10.0, res, res);
    const std::size_t n = 50;
    Tensor features = Tensor::zeros({n, 1});
    for (std::size_t i = 0; i < n; ++i) features.set(i, rng.uniform(0.1, 1.0));

    std::vector<BevGaussian2D> base, rotated;
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3 mu{rng.uniform(-9.0, 9.0), rng.uniform(-9.0, 9.0), 0.0};
        const Mat3 cov = random_spd_cov3d(rng);
        // (x, y) -> (-y, x)
        const Vec3 mu_rot{-mu.y, mu.x, 0.0};
        Mat3 cov_rot;
        cov_rot(0, 0) = cov(1, 1);
        cov_rot(0, 1) = -cov(1, 0);
        cov_rot(1, 0) = -cov(0, 1);
        cov_rot(1, 1) = cov(0, 0);
        cov_rot(2, 2) = cov(2, 2);
        BevGaussian2D g = project_to_bev(mu, cov, grid, 1.5, 0.3, static_cast<int>(i));
        BevGaussian2D gr = project_to_bev(mu_rot, cov_rot, grid, 1.5, 0.3, static_cast<int>(i));
        g.opacity = gr.opacity = rng.uniform(0.1, 1.0);
        base.push_back(g);
        rotated.push_back(gr);
    }
    const BevFeatureMap m = splat_forward(base, features, grid, 1.5, Dtype::f64);
    const BevFeatureMap mr = splat_forward(rotated, features, grid, 1.5, Dtype::f64);
    for (int r = 0; r < res; ++r)
        for (int c = 0; c < res; ++c) {
            const double got = mr.values.at({0, static_cast<std::size_t>(res - 1 - c),
                                             static_cast<std::size_t>(r)});
            const double expect = m.values.at({0, static_cast<std::size_t>(r),
                                               static_cast<std::size_t>(c)});
            CHECK(std::abs(got - expect) <= 1e-5);
        }
}

TEST_CASE("renders are bit-identical across runs and thread counts") {
    Rng rng(67);
    const BevGrid grid(-10.0, 10.0, -10.0, 10.0, 64, 64);
    const Scene s = random_scene(rng, 400, 4, grid, 2.0);

    const BevFeatureMap a = splat_forward(s.gaussians, s.features, grid, 2.0, Dtype::f32);
    const BevFeatureMap b = splat_forward(s.gaussians, s.features, grid, 2.0, Dtype::f32);
    CHECK(a.values.bit_equal(b.values));
    CHECK(a.weight.bit_equal(b.weight));

    set_thread_cap(1);
    const BevFeatureMap single = splat_forward(s.gaussians, s.features, grid, 2.0, Dtype::f32);
    set_thread_cap(4);
    const BevFeatureMap quad = splat_forward(s.gaussians, s.features, grid, 2.0, Dtype::f32);
    set_thread_cap(0);
    CHECK(single.values.bit_equal(quad.values));
    CHECK(single.weight.bit_equal(quad.weight));
    CHECK(a.values.bit_equal(single.values));
}
