#include "bevsplat/bev.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "bevsplat/parallel.hpp"

namespace bevsplat {

namespace {

constexpr int kTileSize = 16;

struct TileRange {
    int row_lo, row_hi;  // inclusive cell bounds, clamped
    int col_lo, col_hi;
    bool empty;
};

/// Cells whose centers can fall inside the cull box of gaussian g.
TileRange cell_bounds(const BevGaussian2D& g, const BevGrid& grid) {
    TileRange r{};
    const double cr = g.cull_radius;
    r.row_lo = std::max(0, static_cast<int>(std::floor(g.mu_row() - cr)));
    r.row_hi = std::min(grid.n_rows - 1, static_cast<int>(std::floor(g.mu_row() + cr)));
    r.col_lo = std::max(0, static_cast<int>(std::floor(g.mu_col() - cr)));
    r.col_hi = std::min(grid.n_cols - 1, static_cast<int>(std::floor(g.mu_col() + cr)));
    r.empty = r.row_lo > r.row_hi || r.col_lo > r.col_hi || !(cr > 0.0);
    return r;
}

}  // namespace

BevGrid::BevGrid(double x_min_, double x_max_, double y_min_, double y_max_, int n_rows_,
                 int n_cols_)
    : x_min(x_min_), x_max(x_max_), y_min(y_min_), y_max(y_max_), n_rows(n_rows_), n_cols(n_cols_) {
    if (!(x_max > x_min) || !(y_max > y_min))
        throw std::invalid_argument("BevGrid: extent must be non-empty");
    if (n_rows < 1 || n_cols < 1) throw std::invalid_argument("BevGrid: need at least one cell");
}

BevGaussian2D project_to_bev(const Vec3& mu3d, const Mat3& cov3d, const BevGrid& grid, double k,
                             double eps, int feature_index) {
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            if (!std::isfinite(cov3d(i, j)))
                throw std::invalid_argument("project_to_bev: non-finite covariance");
    if (!std::isfinite(mu3d.x) || !std::isfinite(mu3d.y) || !std::isfinite(mu3d.z))
        throw std::invalid_argument("project_to_bev: non-finite mean");

    const double scale_row = grid.scale_row();
    const double scale_col = grid.scale_col();

    BevGaussian2D g;
    g.feature_index = feature_index;
    g.mu2d = Vec2{(mu3d.y - grid.y_min) * scale_col, (mu3d.x - grid.x_min) * scale_row};

    // Scaled projection of the ego x/y covariance block; groupings mirror the
    // plain matrix product so the two routes agree bit-for-bit.
    const double a = scale_col * cov3d(1, 1) * scale_col;
    const double b = scale_col * cov3d(1, 0) * scale_row;
    const double c = scale_row * cov3d(0, 0) * scale_row;
    g.cov2d(0, 0) = a + eps;
    g.cov2d(0, 1) = b;
    g.cov2d(1, 0) = b;
    g.cov2d(1, 1) = c + eps;

    const double det = g.cov2d.det();
    if (det > 0.0) {
        g.inv_cov2d = g.cov2d.inverse();
    } else {
        // Unregularized degenerate input: leave an unusable inverse; callers
        // comparing pre-regularization covariances never splat these.
        g.inv_cov2d = Mat2{};
        g.inv_cov2d(0, 0) = g.inv_cov2d(1, 1) = std::numeric_limits<double>::infinity();
    }
    const double lam_max = std::max(g.cov2d.sym_eigenvalues()[0], 0.0);
    g.cull_radius = k * std::sqrt(lam_max) + 0.5;
    return g;
}

BevFeatureMap splat_forward(const std::vector<BevGaussian2D>& gaussians, const Tensor& features,
                            const BevGrid& grid, double k, Dtype dtype) {
    const std::size_t channels = features.rank() == 2 ? features.dim(1) : 0;
    if (channels == 0) throw std::invalid_argument("splat_forward: features must be N x C");
    const std::size_t rows = static_cast<std::size_t>(grid.n_rows);
    const std::size_t cols = static_cast<std::size_t>(grid.n_cols);
    const double k_sq = k * k;

    const int tiles_r = (grid.n_rows + kTileSize - 1) / kTileSize;
    const int tiles_c = (grid.n_cols + kTileSize - 1) / kTileSize;
    const std::size_t n_tiles = static_cast<std::size_t>(tiles_r) * tiles_c;

    // Binning copies each gaussian's hot parameters (and its opacity-scaled
    // feature row) into per-tile work slices of one flat array, so the render
    // phase streams contiguous memory instead of chasing gaussian indices.
    // Layout: count per (chunk, tile), prefix-sum into chunk-ordered slices,
    // then fill. Chunks cover ascending index ranges, so every tile's work
    // list stays sorted by gaussian index and the accumulation order is
    // independent of the thread count.
    struct Work {
        double mu_col, mu_row;
        double q00, q01, q11;
        double opacity;
        int r_lo, r_hi, c_lo, c_hi;
    };
    const std::size_t n = gaussians.size();
    const std::size_t threads =
        std::max<std::size_t>(1, std::min<std::size_t>(
                                     static_cast<std::size_t>(effective_thread_count()),
                                     n == 0 ? 1 : n));
    std::vector<std::size_t> counts(threads * n_tiles, 0);
    parallel_chunks(n, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
        std::size_t* row = counts.data() + chunk * n_tiles;
        for (std::size_t i = begin; i < end; ++i) {
            const TileRange r = cell_bounds(gaussians[i], grid);
            if (r.empty) continue;
            const int t_r_lo = r.row_lo / kTileSize, t_r_hi = r.row_hi / kTileSize;
            const int t_c_lo = r.col_lo / kTileSize, t_c_hi = r.col_hi / kTileSize;
            for (int tr = t_r_lo; tr <= t_r_hi; ++tr)
                for (int tc = t_c_lo; tc <= t_c_hi; ++tc)
                    ++row[static_cast<std::size_t>(tr) * tiles_c + tc];
        }
    });

    // tile_begin[t] .. tile_begin[t+1] spans tile t; cursor[chunk * n_tiles + t]
    // is where each chunk writes inside that span.
    std::vector<std::size_t> tile_begin(n_tiles + 1, 0);
    std::vector<std::size_t> cursor(threads * n_tiles, 0);
    {
        std::size_t acc = 0;
        for (std::size_t t = 0; t < n_tiles; ++t) {
            tile_begin[t] = acc;
            for (std::size_t chunk = 0; chunk < threads; ++chunk) {
                cursor[chunk * n_tiles + t] = acc;
                acc += counts[chunk * n_tiles + t];
            }
        }
        tile_begin[n_tiles] = acc;
    }
    const std::size_t total_pairs = tile_begin[n_tiles];
    std::vector<Work> work(total_pairs);
    std::vector<double> work_feats(total_pairs * channels);

    parallel_chunks(n, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
        std::size_t* cur = cursor.data() + chunk * n_tiles;
        std::vector<double> feat_row(channels);
        for (std::size_t i = begin; i < end; ++i) {
            const BevGaussian2D& g = gaussians[i];
            const TileRange r = cell_bounds(g, grid);
            if (r.empty) continue;
            const std::size_t fbase = static_cast<std::size_t>(g.feature_index) * channels;
            for (std::size_t ch = 0; ch < channels; ++ch)
                feat_row[ch] = g.opacity * features.at(fbase + ch);
            const Work w{g.mu_col(), g.mu_row(), g.inv_cov2d(0, 0), g.inv_cov2d(0, 1),
                         g.inv_cov2d(1, 1), g.opacity, r.row_lo, r.row_hi, r.col_lo, r.col_hi};
            const int t_r_lo = r.row_lo / kTileSize, t_r_hi = r.row_hi / kTileSize;
            const int t_c_lo = r.col_lo / kTileSize, t_c_hi = r.col_hi / kTileSize;
            for (int tr = t_r_lo; tr <= t_r_hi; ++tr)
                for (int tc = t_c_lo; tc <= t_c_hi; ++tc) {
                    const std::size_t slot = cur[static_cast<std::size_t>(tr) * tiles_c + tc]++;
                    work[slot] = w;
                    for (std::size_t ch = 0; ch < channels; ++ch)
                        work_feats[slot * channels + ch] = feat_row[ch];
                }
        }
    });

    BevFeatureMap out;
    out.values = Tensor::zeros({channels, rows, cols}, dtype);
    out.weight = Tensor::zeros({rows, cols}, dtype);

    parallel_chunks(n_tiles, [&](std::size_t, std::size_t t_begin, std::size_t t_end) {
        std::vector<double> acc(static_cast<std::size_t>(kTileSize) * kTileSize * channels);
        std::vector<double> wacc(static_cast<std::size_t>(kTileSize) * kTileSize);

        for (std::size_t t = t_begin; t < t_end; ++t) {
            if (tile_begin[t] == tile_begin[t + 1]) continue;
            const int tr = static_cast<int>(t) / tiles_c;
            const int tc = static_cast<int>(t) % tiles_c;
            const int row0 = tr * kTileSize;
            const int col0 = tc * kTileSize;
            const int row1 = std::min(grid.n_rows, row0 + kTileSize);
            const int col1 = std::min(grid.n_cols, col0 + kTileSize);
            const int th = row1 - row0, tw = col1 - col0;
            std::fill(acc.begin(), acc.begin() + static_cast<std::ptrdiff_t>(th) * tw * channels,
                      0.0);
            std::fill(wacc.begin(), wacc.begin() + static_cast<std::ptrdiff_t>(th) * tw, 0.0);

            for (std::size_t wi = tile_begin[t]; wi < tile_begin[t + 1]; ++wi) {
                const Work& g = work[wi];
                const double* feat_row = work_feats.data() + wi * channels;
                const int r_lo = std::max(g.r_lo, row0), r_hi = std::min(g.r_hi, row1 - 1);
                const int c_lo = std::max(g.c_lo, col0), c_hi = std::min(g.c_hi, col1 - 1);
                for (int row = r_lo; row <= r_hi; ++row) {
                    const double dr = (row + 0.5) - g.mu_row;
                    for (int col = c_lo; col <= c_hi; ++col) {
                        const double dc = (col + 0.5) - g.mu_col;
                        const double q = g.q00 * dc * dc + 2.0 * g.q01 * dc * dr + g.q11 * dr * dr;
                        if (!(q <= k_sq)) continue;
                        const double w = std::exp(-0.5 * q);
                        const std::size_t cell =
                            static_cast<std::size_t>(row - row0) * tw + (col - col0);
                        wacc[cell] += g.opacity * w;
                        double* cell_acc = acc.data() + cell * channels;
                        for (std::size_t ch = 0; ch < channels; ++ch)
                            cell_acc[ch] += w * feat_row[ch];
                    }
                }
            }

            for (int row = row0; row < row1; ++row)
                for (int col = col0; col < col1; ++col) {
                    const std::size_t cell =
                        static_cast<std::size_t>(row - row0) * tw + (col - col0);
                    out.weight.set(static_cast<std::size_t>(row) * cols + col, wacc[cell]);
                    for (std::size_t ch = 0; ch < channels; ++ch)
                        out.values.set((ch * rows + row) * cols + col, acc[cell * channels + ch]);
                }
        }
    });
    return out;
}

BevFeatureMap splat_oracle(const std::vector<BevGaussian2D>& gaussians, const Tensor& features,
                           const BevGrid& grid, double k) {
    const std::size_t channels = features.rank() == 2 ? features.dim(1) : 0;
    if (channels == 0) throw std::invalid_argument("splat_oracle: features must be N x C");
    const std::size_t rows = static_cast<std::size_t>(grid.n_rows);
    const std::size_t cols = static_cast<std::size_t>(grid.n_cols);
    const double k_sq = k * k;

    BevFeatureMap out;
    out.values = Tensor::zeros({channels, rows, cols}, Dtype::f64);
    out.weight = Tensor::zeros({rows, cols}, Dtype::f64);

    for (std::size_t row = 0; row < rows; ++row) {
        for (std::size_t col = 0; col < cols; ++col) {
            double wsum = 0.0;
            std::vector<double> vsum(channels, 0.0);
            for (const BevGaussian2D& g : gaussians) {
                const double dc = (col + 0.5) - g.mu_col();
                const double dr = (row + 0.5) - g.mu_row();
                const double q = g.inv_cov2d(0, 0) * dc * dc + 2.0 * g.inv_cov2d(0, 1) * dc * dr +
                                 g.inv_cov2d(1, 1) * dr * dr;
                if (!(q <= k_sq)) continue;
                const double w = g.opacity * std::exp(-0.5 * q);
                wsum += w;
                for (std::size_t ch = 0; ch < channels; ++ch)
                    vsum[ch] += w * features.at(static_cast<std::size_t>(g.feature_index) *
                                                    channels +
                                                ch);
            }
            out.weight.set(row * cols + col, wsum);
            for (std::size_t ch = 0; ch < channels; ++ch)
                out.values.set((ch * rows + row) * cols + col, vsum[ch]);
        }
    }
    return out;
}

}  // namespace bevsplat
