#pragma once

#include <span>
#include <vector>

#include "edfusion/camera.hpp"
#include "edfusion/spatial_hash.hpp"
#include "edfusion/types.hpp"

namespace edfusion {

struct Surfel {
  Vec3 position = Vec3::Zero();  // mm
  Vec3 normal = Vec3(0.0, 0.0, -1.0);
  Rgb8 color{0, 0, 0};
  double weight = 0.0;

  bool operator==(const Surfel&) const = default;
};

/// Where a surfel was first observed: frame index and pixel (-1 if unknown).
struct Provenance {
  int frame = -1;
  PixelIndex pixel;
};

/// The live model: weighted, colored surfels plus a voxel-hash over their
/// positions. Non-const access to the surfels marks the index stale; it is
/// rebuilt on the next index() call, so call index() once after a mutation
/// batch before issuing concurrent queries.
class SurfelCloud {
 public:
  explicit SurfelCloud(double index_cell = 2.0) : index_cell_(index_cell) {}

  std::size_t size() const { return surfels_.size(); }
  bool empty() const { return surfels_.empty(); }

  const std::vector<Surfel>& surfels() const { return surfels_; }
  std::vector<Surfel>& surfels() {
    dirty_ = true;
    return surfels_;
  }
  const Surfel& operator[](std::size_t i) const { return surfels_[i]; }

  void push_back(const Surfel& s) {
    dirty_ = true;
    surfels_.push_back(s);
  }

  std::vector<Vec3> positions() const;
  const VoxelHash& index() const;
  double index_cell() const { return index_cell_; }

  bool operator==(const SurfelCloud& o) const { return surfels_ == o.surfels_; }

 private:
  double index_cell_;
  std::vector<Surfel> surfels_;
  mutable VoxelHash index_;
  mutable bool dirty_ = true;
};

/// Indices of the points in each occupied voxel, voxels ordered by key.
std::vector<std::vector<int>> voxel_groups(std::span<const Vec3> points, double cell);

/// One centroid per occupied voxel (grid origin at the world origin), ordered
/// by voxel key. Empty input gives empty output.
std::vector<Vec3> voxel_downsample(std::span<const Vec3> points, double cell);

/// Replaces every surfel normal with the PCA plane normal of its k nearest
/// neighbors (itself included), oriented toward the camera origin. Surfels
/// with fewer than 3 neighbors keep their normal.
void estimate_normals(SurfelCloud& cloud, int k = 8);

void transform(SurfelCloud& cloud, const RigidTransform& t);

}  // namespace edfusion
