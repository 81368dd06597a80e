#pragma once

#include <span>
#include <vector>

#include "edfusion/image.hpp"
#include "edfusion/surfel_cloud.hpp"
#include "edfusion/warp.hpp"

namespace edfusion {

struct FusionParams {
  double tau = 4.0;        // mm, largest accepted |model z - observed z|
  double omega_max = 10.0;
  double eps = 4.0;        // mm, node grid size
  double insert_cell = 0.2;  // mm

  void validate() const;
};

/// Fusion confidence of a warped point: d_min / (0.5 eps) when its z is
/// within tau of the observed depth at its pixel, else 0. d_min is the
/// distance to the nearest bound node at its deformed position g + t.
/// Zero when the point does not project onto valid depth.
double tsdw(const Vec3& warped, const PointBinding& binding, const EDGraph& graph, const DepthFrame& frame,
            const FusionParams& params);

struct FusionStats {
  std::size_t fused = 0;
  std::size_t gated = 0;  // visible but tsdw == 0
};

/// Running-average update of the visible surfels of an already warped cloud:
/// z <- (z w + D) / (w + 1) along the surfel's camera ray, w <- min(w + 1,
/// omega_max), color <- frame color at its projection (bilinear). Surfels
/// whose tsdw is 0 are untouched.
/// Each surfel reads only its own pixel, so the update is order independent.
FusionStats fuse_depth(SurfelCloud& cloud, const EDGraph& graph, std::span<const PointBinding> bindings,
                       std::span<const int> visible, const DepthFrame& frame, const FusionParams& params);

/// Pixels with a model surfel within one pixel whose depth agrees with the
/// observation to within tau.
Image<char> model_coverage(const SurfelCloud& cloud, const DepthFrame& frame, double tau);

/// Back-projects valid, uncovered pixels that have an observed normal,
/// merges them per insert_cell voxel (mean position, normal and color) and
/// appends them with weight 1. Returns the number of surfels added; when
/// `origins` is given it receives one source pixel per new surfel.
std::size_t insert_new_points(SurfelCloud& cloud, const Observation& obs, const FusionParams& params,
                              std::vector<PixelIndex>* origins = nullptr);

/// Unobserved surfels follow the solved field like every other surfel; the
/// regularized warp carries them rigidly with their neighborhood.
inline SurfelCloud predict_unobserved(const EDGraph& graph, const SurfelCloud& cloud,
                                      std::span<const PointBinding> bindings) {
  return apply_warp(graph, cloud, bindings);
}

}  // namespace edfusion
