#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "edfusion/types.hpp"

namespace edfusion {

/// Integer cell of a uniform grid with its origin at (0, 0, 0).
struct VoxelKey {
  std::int64_t x = 0;
  std::int64_t y = 0;
  std::int64_t z = 0;

  auto operator<=>(const VoxelKey&) const = default;
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const noexcept {
    std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9E3779B97F4A7C15ull;
    h ^= static_cast<std::uint64_t>(k.y) * 0xC2B2AE3D27D4EB4Full + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(k.z) * 0x165667B19E3779F9ull + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

inline VoxelKey voxel_key(const Vec3& p, double cell) {
  return {static_cast<std::int64_t>(std::floor(p.x() / cell)), static_cast<std::int64_t>(std::floor(p.y() / cell)),
          static_cast<std::int64_t>(std::floor(p.z() / cell))};
}

struct Neighbor {
  int index = -1;
  double distance = 0.0;
};

/// Uniform voxel hash over a point set. Results are ordered by
/// (distance, index), so ties resolve deterministically.
class VoxelHash {
 public:
  VoxelHash() = default;
  explicit VoxelHash(double cell) : cell_(cell) {}
  VoxelHash(double cell, std::span<const Vec3> points) : cell_(cell) { build(points); }

  void build(std::span<const Vec3> points);

  double cell() const { return cell_; }
  std::size_t size() const { return points_.size(); }
  const std::vector<Vec3>& points() const { return points_; }

  std::vector<Neighbor> radius_search(const Vec3& q, double radius) const;
  std::vector<Neighbor> knn(const Vec3& q, int k) const;
  std::optional<Neighbor> nearest_within(const Vec3& q, double radius) const;

 private:
  void visit_cell(const VoxelKey& key, const Vec3& q, std::vector<Neighbor>& out) const;

  double cell_ = 1.0;
  std::vector<Vec3> points_;
  std::unordered_map<VoxelKey, std::vector<int>, VoxelKeyHash> cells_;
  VoxelKey lo_{}, hi_{};
};

}  // namespace edfusion
