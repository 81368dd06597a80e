#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "edfusion/image.hpp"
#include "edfusion/surfel_cloud.hpp"
#include "edfusion/types.hpp"

namespace edfusion {

struct Correspondence {
  Vec3 src;  // on the model, model (previous camera) coordinates
  Vec3 dst;  // on the new frame, current camera coordinates
  double score = 0.0;
};

struct CorrespondenceSet {
  std::vector<Correspondence> pairs;
  std::vector<char> inlier_mask;  // same length as pairs

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
  std::size_t inlier_count() const;
  std::vector<Correspondence> inliers() const;
  void add(const Correspondence& c) {
    pairs.push_back(c);
    inlier_mask.push_back(1);
  }
};

struct MatcherConfig {
  int stride = 3;
  int patch = 11;
  double max_descriptor_dist = 0.3;  // on 1 - NCC
  double ratio_test = 0.8;
  int search_radius = 48;
  double min_patch_std = 0.5;  // gray levels; flatter patches are skipped
  int refine_radius = 4;       // pixels, search of the guided second pass; 0 disables it

  void validate() const;
};

struct RansacConfig {
  double inlier_threshold = 2.0;  // mm
  int max_iters = 1000;
  int min_inliers = 10;
  int refine_rounds = 2;
  std::uint64_t seed = 0;

  void validate() const;
};

/// The model splatted into the last camera: color, depth, and which surfel
/// won each pixel (-1 where nothing landed).
struct ModelView {
  RgbImage rgb;
  DepthImage depth;
  Image<int> surfel;
  Image<Vec3> point;  // where the pixel's color comes from (mean of the surfels blended into it)
  CameraIntrinsics intrinsics;
  int frame_index = 0;  // camera the view was rendered for
};

/// Surfels in front of the camera that project into the image and face it.
std::vector<int> facing_surfels(const SurfelCloud& cloud, const CameraIntrinsics& intr);

/// Surfels closer than this behind a pixel's nearest one share its color.
inline constexpr double kViewSheetDepth = 1.0;  // mm
/// Below this |cos| between ray and normal a splat keeps its own depth.
inline constexpr double kMinSplatCosine = 0.2;

/// One-pixel z-buffer splats of the given surfels. A splat's depth is where
/// the pixel-center ray meets the surfel's tangent plane; nearest depth wins,
/// equal depths go to the lower surfel index. The pixel color is the mean over the
/// surfels within kViewSheetDepth of the nearest, which filters texture when
/// several surfels land on one pixel.
ModelView render_model_view(const SurfelCloud& cloud, const CameraIntrinsics& intr, std::span<const int> visible,
                            int frame_index = 0);

/// Fills empty pixels with the mean depth, color and point of their valid
/// 4-neighbors (surfel id stays -1), over up to three passes. The first pass
/// needs two opposite neighbors or three of four; later passes any two. Closes the one-pixel gaps left
/// when splatting a cloud seen from a new pose.
void close_view_holes(ModelView& view);

/// Grid-sampled patch matching from the model view to the frame: for each
/// grid location with a fully covered, textured patch, the best normalized
/// cross-correlation within search_radius is kept if it passes the distance
/// threshold and the ratio test against the second-best correlation peak.
/// Matches are refined to sub-pixel by aligning the patch with gain and
/// bias; src is the view's point at the grid
/// pixel, dst is lifted through the frame depth.
CorrespondenceSet match_dense(const ModelView& view, const DepthFrame& frame, const MatcherConfig& cfg);

/// Least-squares rigid motion mapping src onto dst (cross-covariance SVD with
/// a reflection guard). Needs at least 3 pairs.
RigidTransform fit_rigid(std::span<const Vec3> src, std::span<const Vec3> dst);

struct RansacResult {
  RigidTransform transform;
  std::vector<char> inlier_mask;
  std::size_t inliers = 0;
  std::size_t minimal_sample_inliers = 0;  // count of the best 3-point hypothesis
};

/// 3-point RANSAC ranked by truncated quadratic loss, followed by
/// refine_rounds of refit-on-inliers. Iteration i draws from its own
/// generator seeded from (seed, i). Throws
/// Error(PoseInitFailed) with fewer than 3 pairs or fewer than min_inliers
/// final inliers.
RansacResult ransac_rigid(const CorrespondenceSet& corrs, const RansacConfig& cfg);

/// Source of model-to-frame correspondences.
class CorrespondenceProvider {
 public:
  virtual ~CorrespondenceProvider() = default;
  virtual CorrespondenceSet find(const ModelView& view, const DepthFrame& frame) const = 0;
  /// Second pass against a view rendered under the rigid estimate of the
  /// first, so src is in the predicted coordinates. An empty set keeps the
  /// first pass.
  virtual CorrespondenceSet refine(const ModelView& /*predicted*/, const DepthFrame& /*frame*/) const { return {}; }
};

class NccProvider : public CorrespondenceProvider {
 public:
  explicit NccProvider(MatcherConfig cfg = {}) : cfg_(cfg) {}
  CorrespondenceSet find(const ModelView& view, const DepthFrame& frame) const override {
    return match_dense(view, frame, cfg_);
  }
  CorrespondenceSet refine(const ModelView& predicted, const DepthFrame& frame) const override {
    if (cfg_.refine_radius == 0) return {};
    MatcherConfig local = cfg_;
    local.search_radius = cfg_.refine_radius;
    return match_dense(predicted, frame, local);
  }

 private:
  MatcherConfig cfg_;
};

}  // namespace edfusion
