#include "bevsplat/lift.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "bevsplat/parallel.hpp"

namespace bevsplat {

DepthDistribution softmax_depth(const Tensor& logits) {
    if (logits.rank() != 3) throw std::invalid_argument("softmax_depth: expected B x H x W logits");
    const std::size_t bins = logits.dim(0);
    const std::size_t rows = logits.dim(1);
    const std::size_t cols = logits.dim(2);
    const std::size_t pixels = rows * cols;

    DepthDistribution out;
    out.logits = logits;
    out.probs = Tensor::zeros({bins, rows, cols}, logits.dtype());

    for (std::size_t p = 0; p < pixels; ++p) {
        double max_logit = -std::numeric_limits<double>::infinity();
        for (std::size_t b = 0; b < bins; ++b) {
            const double v = logits.at(b * pixels + p);
            if (!std::isfinite(v))
                throw std::invalid_argument("softmax_depth: non-finite logit");
            max_logit = std::max(max_logit, v);
        }
        double denom = 0.0;
        for (std::size_t b = 0; b < bins; ++b)
            denom += std::exp(logits.at(b * pixels + p) - max_logit);
        for (std::size_t b = 0; b < bins; ++b)
            out.probs.set(b * pixels + p, std::exp(logits.at(b * pixels + p) - max_logit) / denom);
    }
    return out;
}

DepthMoments depth_moments(const DepthDistribution& dist, const DepthBinning& bins, double k) {
    if (dist.bins() != bins.values.size())
        throw std::invalid_argument("depth_moments: bin count mismatch");
    const std::size_t rows = dist.rows();
    const std::size_t cols = dist.cols();
    const std::size_t pixels = rows * cols;
    const std::size_t nbins = bins.values.size();

    DepthMoments m;
    const Dtype dt = dist.probs.dtype();
    m.mu = Tensor::zeros({rows, cols}, dt);
    m.sigma = Tensor::zeros({rows, cols}, dt);
    m.range_lo = Tensor::zeros({rows, cols}, dt);
    m.range_hi = Tensor::zeros({rows, cols}, dt);

    for (std::size_t p = 0; p < pixels; ++p) {
        double mu = 0.0;
        for (std::size_t b = 0; b < nbins; ++b) mu += dist.probs.at(b * pixels + p) * bins.values[b];
        double var = 0.0;
        for (std::size_t b = 0; b < nbins; ++b) {
            const double d = bins.values[b] - mu;
            var += dist.probs.at(b * pixels + p) * d * d;
        }
        const double sigma = std::sqrt(std::max(var, 0.0));
        m.mu.set(p, mu);
        m.sigma.set(p, sigma);
        m.range_lo.set(p, mu - k * sigma);
        m.range_hi.set(p, mu + k * sigma);
    }
    return m;
}

std::pair<Tensor, Tensor> moments_3d(const DepthDistribution& dist, const Frustum& frustum) {
    const std::size_t rows = dist.rows();
    const std::size_t cols = dist.cols();
    const std::size_t nbins = dist.bins();
    if (frustum.rows() != rows || frustum.cols() != cols || frustum.bins() != nbins)
        throw std::invalid_argument("moments_3d: frustum shape " + frustum.points.shape_string() +
                                    " does not match distribution " +
                                    dist.probs.shape_string());
    const std::size_t pixels = rows * cols;
    const Dtype dt = dist.probs.dtype();
    Tensor mu3d = Tensor::zeros({pixels, 3}, dt);
    Tensor cov3d = Tensor::zeros({pixels, 3, 3}, dt);

    parallel_for(pixels, [&](std::size_t p) {
        const std::size_t i = p / cols;
        const std::size_t j = p % cols;
        double mean[3] = {0.0, 0.0, 0.0};
        for (std::size_t b = 0; b < nbins; ++b) {
            const double w = dist.probs.at(b * pixels + p);
            const Vec3 pt = frustum.point(i, j, b);
            mean[0] += w * pt.x;
            mean[1] += w * pt.y;
            mean[2] += w * pt.z;
        }
        double cov[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
        for (std::size_t b = 0; b < nbins; ++b) {
            const double w = dist.probs.at(b * pixels + p);
            const Vec3 pt = frustum.point(i, j, b);
            const double d[3] = {pt.x - mean[0], pt.y - mean[1], pt.z - mean[2]};
            for (int a = 0; a < 3; ++a)
                for (int c = 0; c < 3; ++c) cov[a][c] += w * d[a] * d[c];
        }
        for (int a = 0; a < 3; ++a) mu3d.set(p * 3 + static_cast<std::size_t>(a), mean[a]);
        for (int a = 0; a < 3; ++a)
            for (int c = 0; c < 3; ++c)
                cov3d.set(p * 9 + static_cast<std::size_t>(a) * 3 + static_cast<std::size_t>(c),
                          cov[a][c]);
    });
    return {std::move(mu3d), std::move(cov3d)};
}

PixelGaussianSet assemble_gaussians(const Tensor& mu3d, const Tensor& cov3d,
                                    const Tensor& opacity_logits, const Tensor& features,
                                    int camera_index) {
    if (opacity_logits.rank() != 2)
        throw std::invalid_argument("assemble_gaussians: opacity_logits must be H x W");
    if (features.rank() != 3)
        throw std::invalid_argument("assemble_gaussians: features must be C x H x W");
    const std::size_t rows = opacity_logits.dim(0);
    const std::size_t cols = opacity_logits.dim(1);
    const std::size_t pixels = rows * cols;
    const std::size_t channels = features.dim(0);
    if (channels < 1) throw std::invalid_argument("assemble_gaussians: features need C >= 1");
    if (features.dim(1) != rows || features.dim(2) != cols)
        throw std::invalid_argument("assemble_gaussians: feature grid mismatch");
    if (mu3d.rank() != 2 || mu3d.dim(0) != pixels || mu3d.dim(1) != 3)
        throw std::invalid_argument("assemble_gaussians: mu3d must be N x 3 with N = H*W");
    if (cov3d.rank() != 3 || cov3d.dim(0) != pixels || cov3d.dim(1) != 3 || cov3d.dim(2) != 3)
        throw std::invalid_argument("assemble_gaussians: cov3d must be N x 3 x 3");

    PixelGaussianSet s;
    s.mu3d = mu3d;
    s.cov3d = cov3d;
    s.opacity = Tensor::zeros({pixels}, opacity_logits.dtype());
    s.features = Tensor::zeros({pixels, channels}, features.dtype());
    s.source.resize(pixels);
    for (std::size_t p = 0; p < pixels; ++p) {
        s.opacity.set(p, logistic(opacity_logits.at(p)));
        for (std::size_t c = 0; c < channels; ++c)
            s.features.set(p * channels + c, features.at(c * pixels + p));
        s.source[p] = {camera_index, static_cast<int>(p / cols), static_cast<int>(p % cols)};
    }
    return s;
}

PixelGaussianSet merge_gaussians(const std::vector<PixelGaussianSet>& sets) {
    if (sets.empty()) throw std::invalid_argument("merge_gaussians: empty list");
    const std::size_t channels = sets.front().channels();
    const Dtype dt = sets.front().mu3d.dtype();
    std::size_t total = 0;
    for (const auto& s : sets) {
        if (s.channels() != channels)
            throw std::invalid_argument("merge_gaussians: channel mismatch");
        total += s.size();
    }
    PixelGaussianSet out;
    const std::size_t alloc = std::max<std::size_t>(total, 1);
    out.mu3d = Tensor::zeros({alloc, 3}, dt);
    out.cov3d = Tensor::zeros({alloc, 3, 3}, dt);
    out.opacity = Tensor::zeros({alloc}, dt);
    out.features = Tensor::zeros({alloc, channels}, sets.front().features.dtype());
    out.source.reserve(total);
    std::size_t g = 0;
    for (const auto& s : sets) {
        for (std::size_t i = 0; i < s.size(); ++i, ++g) {
            for (std::size_t a = 0; a < 3; ++a) out.mu3d.set(g * 3 + a, s.mu3d.at(i * 3 + a));
            for (std::size_t a = 0; a < 9; ++a) out.cov3d.set(g * 9 + a, s.cov3d.at(i * 9 + a));
            out.opacity.set(g, s.opacity.at(i));
            for (std::size_t c = 0; c < channels; ++c)
                out.features.set(g * channels + c, s.features.at(i * channels + c));
            out.source.push_back(s.source[i]);
        }
    }
    return out;
}

FilterResult filter_opacity(const PixelGaussianSet& gaussians, double threshold) {
    if (threshold < 0.0 || threshold > 1.0)
        throw std::invalid_argument("filter_opacity: threshold must lie in [0, 1]");
    const std::size_t n = gaussians.size();
    std::vector<std::size_t> keep;
    keep.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        if (gaussians.opacity.at(i) >= threshold) keep.push_back(i);

    FilterResult r;
    r.retained_fraction = n == 0 ? 1.0 : static_cast<double>(keep.size()) / static_cast<double>(n);
    const std::size_t channels = gaussians.channels();
    const std::size_t m = keep.size();
    if (m == 0) {
        r.retained.mu3d = Tensor::zeros({1, 3}, gaussians.mu3d.dtype());
        r.retained.cov3d = Tensor::zeros({1, 3, 3}, gaussians.cov3d.dtype());
        r.retained.opacity = Tensor::zeros({1}, gaussians.opacity.dtype());
        r.retained.features = Tensor::zeros({1, channels}, gaussians.features.dtype());
        r.retained.source.clear();
        return r;
    }
    r.retained.mu3d = Tensor::zeros({m, 3}, gaussians.mu3d.dtype());
    r.retained.cov3d = Tensor::zeros({m, 3, 3}, gaussians.cov3d.dtype());
    r.retained.opacity = Tensor::zeros({m}, gaussians.opacity.dtype());
    r.retained.features = Tensor::zeros({m, channels}, gaussians.features.dtype());
    r.retained.source.resize(m);
    for (std::size_t o = 0; o < m; ++o) {
        const std::size_t i = keep[o];
        for (std::size_t a = 0; a < 3; ++a) r.retained.mu3d.set(o * 3 + a, gaussians.mu3d.at(i * 3 + a));
        for (std::size_t a = 0; a < 9; ++a)
            r.retained.cov3d.set(o * 9 + a, gaussians.cov3d.at(i * 9 + a));
        r.retained.opacity.set(o, gaussians.opacity.at(i));
        for (std::size_t c = 0; c < channels; ++c)
            r.retained.features.set(o * channels + c, gaussians.features.at(i * channels + c));
        r.retained.source[o] = gaussians.source[i];
    }
    return r;
}

}  // namespace bevsplat
