#pragma once

#include <vector>

#include "bevsplat/bev.hpp"
#include "bevsplat/config.hpp"
#include "bevsplat/lift.hpp"

namespace bevsplat {

/// Square grids sharing one metric extent, one per requested resolution.
std::vector<BevGrid> make_scale_grids(const RunConfig::Bev& bev, const std::vector<int>& scales);

/// Projects and renders the Gaussian set once per grid. All grids must share
/// the same metric extent; covariances are re-projected per scale because the
/// cells-per-meter factors differ. `k` is the Mahalanobis cutoff and `eps`
/// the per-scale regularization (cell^2).
std::vector<BevFeatureMap> render_multiscale(const PixelGaussianSet& gaussians,
                                             const std::vector<BevGrid>& grids, double k,
                                             double eps, Dtype dtype = Dtype::f32);

/// Upsamples to target x target cells (target an integer multiple of the
/// source resolution). nearest replicates blocks; bilinear aligns cell
/// centers (half-cell offsets) and extends the edge gradient linearly so
/// linear ramps are reproduced exactly.
BevFeatureMap upsample(const BevFeatureMap& map, int target, UpsampleMode mode);

/// sum: channel-wise addition (all maps share C). concat: stacks channels.
/// Weights are added in both modes. All maps must share one resolution.
BevFeatureMap fuse(const std::vector<BevFeatureMap>& maps, FuseMode mode);

}  // namespace bevsplat
