#include "bevsplat/multiscale.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace bevsplat {

std::vector<BevGrid> make_scale_grids(const RunConfig::Bev& bev, const std::vector<int>& scales) {
    std::vector<BevGrid> grids;
    grids.reserve(scales.size());
    for (int s : scales) grids.emplace_back(bev.x_min, bev.x_max, bev.y_min, bev.y_max, s, s);
    return grids;
}

std::vector<BevFeatureMap> render_multiscale(const PixelGaussianSet& gaussians,
                                             const std::vector<BevGrid>& grids, double k,
                                             double eps, Dtype dtype) {
    if (grids.empty()) throw std::invalid_argument("render_multiscale: no grids");
    for (std::size_t i = 1; i < grids.size(); ++i) {
        const BevGrid& g = grids[i];
        const BevGrid& g0 = grids[0];
        if (g.x_min != g0.x_min || g.x_max != g0.x_max || g.y_min != g0.y_min ||
            g.y_max != g0.y_max)
            throw std::invalid_argument("render_multiscale: grids must share one metric extent");
    }

    std::vector<BevFeatureMap> maps;
    maps.reserve(grids.size());
    const std::size_t n = gaussians.size();
    for (const BevGrid& grid : grids) {
        std::vector<BevGaussian2D> projected;
        projected.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            BevGaussian2D g = project_to_bev(gaussians.mean(i), gaussians.covariance(i), grid, k,
                                             eps, static_cast<int>(i));
            g.opacity = gaussians.opacity.at(i);
            projected.push_back(g);
        }
        maps.push_back(splat_forward(projected, gaussians.features, grid, k, dtype));
    }
    return maps;
}

namespace {

Tensor upsample_plane(const Tensor& src, std::size_t planes, std::size_t rows, std::size_t cols,
                      int target, UpsampleMode mode) {
    const int ratio_r = target / static_cast<int>(rows);
    const std::size_t t = static_cast<std::size_t>(target);
    Tensor out = Tensor::zeros(src.rank() == 3 ? std::vector<std::size_t>{planes, t, t}
                                               : std::vector<std::size_t>{t, t},
                               src.dtype());
    if (mode == UpsampleMode::nearest) {
        for (std::size_t p = 0; p < planes; ++p)
            for (std::size_t r = 0; r < t; ++r)
                for (std::size_t c = 0; c < t; ++c) {
                    const std::size_t sr = r / static_cast<std::size_t>(ratio_r);
                    const std::size_t sc = c / static_cast<std::size_t>(target / static_cast<int>(cols));
                    out.set((p * t + r) * t + c, src.at((p * rows + sr) * cols + sc));
                }
        return out;
    }

    // Bilinear on cell centers. Source coordinate of target center
    // (r + 0.5) is s = (r + 0.5) / ratio - 0.5; edge cells extrapolate the
    // outermost-pair gradient instead of clamping so linear fields survive.
    const double ratio_rd = static_cast<double>(target) / static_cast<double>(rows);
    const double ratio_cd = static_cast<double>(target) / static_cast<double>(cols);
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t r = 0; r < t; ++r) {
            const double sr = (static_cast<double>(r) + 0.5) / ratio_rd - 0.5;
            std::ptrdiff_t r0 = static_cast<std::ptrdiff_t>(std::floor(sr));
            double wr = sr - static_cast<double>(r0);
            if (r0 < 0) {
                wr += static_cast<double>(r0);
                r0 = 0;
            } else if (r0 >= static_cast<std::ptrdiff_t>(rows) - 1) {
                wr += static_cast<double>(r0 - (static_cast<std::ptrdiff_t>(rows) - 2));
                r0 = static_cast<std::ptrdiff_t>(rows) - 2;
            }
            for (std::size_t c = 0; c < t; ++c) {
                const double sc = (static_cast<double>(c) + 0.5) / ratio_cd - 0.5;
                std::ptrdiff_t c0 = static_cast<std::ptrdiff_t>(std::floor(sc));
                double wc = sc - static_cast<double>(c0);
                if (c0 < 0) {
                    wc += static_cast<double>(c0);
                    c0 = 0;
                } else if (c0 >= static_cast<std::ptrdiff_t>(cols) - 1) {
                    wc += static_cast<double>(c0 - (static_cast<std::ptrdiff_t>(cols) - 2));
                    c0 = static_cast<std::ptrdiff_t>(cols) - 2;
                }
                const auto v = [&](std::ptrdiff_t rr, std::ptrdiff_t cc) {
                    return src.at((p * rows + static_cast<std::size_t>(rr)) * cols +
                                  static_cast<std::size_t>(cc));
                };
                const double top = v(r0, c0) * (1.0 - wc) + v(r0, c0 + 1) * wc;
                const double bot = v(r0 + 1, c0) * (1.0 - wc) + v(r0 + 1, c0 + 1) * wc;
                out.set((p * t + r) * t + c, top * (1.0 - wr) + bot * wr);
            }
        }
    return out;
}

}  // namespace

BevFeatureMap upsample(const BevFeatureMap& map, int target, UpsampleMode mode) {
    const std::size_t rows = map.n_rows();
    const std::size_t cols = map.n_cols();
    if (rows != cols) throw std::invalid_argument("upsample: expected a square map");
    if (target < static_cast<int>(rows) || target % static_cast<int>(rows) != 0)
        throw std::invalid_argument("upsample: target " + std::to_string(target) +
                                    " is not an integer multiple of source " +
                                    std::to_string(rows));
    if (rows < 2 && mode == UpsampleMode::bilinear && target != static_cast<int>(rows))
        throw std::invalid_argument("upsample: bilinear needs at least 2 source cells per axis");
    if (target == static_cast<int>(rows)) return map;

    BevFeatureMap out;
    out.values = upsample_plane(map.values, map.channels(), rows, cols, target, mode);
    out.weight = upsample_plane(map.weight, 1, rows, cols, target, mode);
    return out;
}

BevFeatureMap fuse(const std::vector<BevFeatureMap>& maps, FuseMode mode) {
    if (maps.empty()) throw std::invalid_argument("fuse: no maps");
    const std::size_t rows = maps.front().n_rows();
    const std::size_t cols = maps.front().n_cols();
    for (const auto& m : maps)
        if (m.n_rows() != rows || m.n_cols() != cols)
            throw std::invalid_argument("fuse: maps must share one resolution");

    BevFeatureMap out;
    if (mode == FuseMode::sum) {
        const std::size_t channels = maps.front().channels();
        for (const auto& m : maps)
            if (m.channels() != channels)
                throw std::invalid_argument("fuse: sum mode requires equal channel counts");
        out.values = Tensor::zeros({channels, rows, cols}, maps.front().values.dtype());
        for (std::size_t i = 0; i < out.values.size(); ++i) {
            double acc = 0.0;
            for (const auto& m : maps) acc += m.values.at(i);
            out.values.set(i, acc);
        }
    } else {
        std::size_t channels = 0;
        for (const auto& m : maps) channels += m.channels();
        out.values = Tensor::zeros({channels, rows, cols}, maps.front().values.dtype());
        std::size_t offset = 0;
        for (const auto& m : maps) {
            for (std::size_t i = 0; i < m.values.size(); ++i)
                out.values.set(offset * rows * cols + i, m.values.at(i));
            offset += m.channels();
        }
    }
    out.weight = Tensor::zeros({rows, cols}, maps.front().weight.dtype());
    for (std::size_t i = 0; i < out.weight.size(); ++i) {
        double acc = 0.0;
        for (const auto& m : maps) acc += m.weight.at(i);
        out.weight.set(i, acc);
    }
    return out;
}

}  // namespace bevsplat
