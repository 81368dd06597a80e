#include "edfusion/surfel_cloud.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <Eigen/Eigenvalues>

#include "edfusion/error.hpp"
#include "edfusion/parallel.hpp"

namespace edfusion {

namespace {

bool closer(const Neighbor& a, const Neighbor& b) {
  return a.distance < b.distance || (a.distance == b.distance && a.index < b.index);
}

}  // namespace

void VoxelHash::build(std::span<const Vec3> points) {
  if (!(cell_ > 0.0)) throw Error(ErrorCode::InvalidArgument, "voxel hash cell must be > 0");
  points_.assign(points.begin(), points.end());
  cells_.clear();
  for (std::size_t i = 0; i < points_.size(); ++i) {
    const VoxelKey k = voxel_key(points_[i], cell_);
    cells_[k].push_back(static_cast<int>(i));
    if (i == 0) {
      lo_ = hi_ = k;
    } else {
      lo_ = {std::min(lo_.x, k.x), std::min(lo_.y, k.y), std::min(lo_.z, k.z)};
      hi_ = {std::max(hi_.x, k.x), std::max(hi_.y, k.y), std::max(hi_.z, k.z)};
    }
  }
}

void VoxelHash::visit_cell(const VoxelKey& key, const Vec3& q, std::vector<Neighbor>& out) const {
  auto it = cells_.find(key);
  if (it == cells_.end()) return;
  for (int i : it->second) out.push_back({i, (points_[i] - q).norm()});
}

std::vector<Neighbor> VoxelHash::radius_search(const Vec3& q, double radius) const {
  std::vector<Neighbor> out;
  if (points_.empty() || radius < 0.0) return out;
  const VoxelKey c = voxel_key(q, cell_);
  const auto r = static_cast<std::int64_t>(std::ceil(radius / cell_));
  const auto span = (2 * r + 1);
  if (span * span * span > static_cast<std::int64_t>(cells_.size()) * 4) {
    for (std::size_t i = 0; i < points_.size(); ++i) {
      const double d = (points_[i] - q).norm();
      if (d <= radius) out.push_back({static_cast<int>(i), d});
    }
  } else {
    std::vector<Neighbor> cand;
    for (auto dx = -r; dx <= r; ++dx)
      for (auto dy = -r; dy <= r; ++dy)
        for (auto dz = -r; dz <= r; ++dz) visit_cell({c.x + dx, c.y + dy, c.z + dz}, q, cand);
    for (const auto& n : cand)
      if (n.distance <= radius) out.push_back(n);
  }
  std::sort(out.begin(), out.end(), closer);
  return out;
}

std::vector<Neighbor> VoxelHash::knn(const Vec3& q, int k) const {
  std::vector<Neighbor> cand;
  if (points_.empty() || k <= 0) return cand;
  const VoxelKey c = voxel_key(q, cell_);
  const std::int64_t max_ring =
      std::max({std::abs(c.x - lo_.x), std::abs(c.x - hi_.x), std::abs(c.y - lo_.y), std::abs(c.y - hi_.y),
                std::abs(c.z - lo_.z), std::abs(c.z - hi_.z)});
  const auto kk = static_cast<std::size_t>(k);
  bool brute = false;
  for (std::int64_t r = 0; r <= max_ring; ++r) {
    const std::int64_t side = 2 * r + 1;
    if (side * side * side > static_cast<std::int64_t>(cells_.size()) * 8) {
      brute = true;
      break;
    }
    for (auto dx = -r; dx <= r; ++dx)
      for (auto dy = -r; dy <= r; ++dy)
        for (auto dz = -r; dz <= r; ++dz) {
          if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != r) continue;
          visit_cell({c.x + dx, c.y + dy, c.z + dz}, q, cand);
        }
    if (cand.size() >= kk) {
      std::nth_element(cand.begin(), cand.begin() + (kk - 1), cand.end(), closer);
      // Anything outside the visited block is at least r * cell away.
      if (cand[kk - 1].distance <= static_cast<double>(r) * cell_) break;
    }
  }
  if (brute) {
    cand.clear();
    for (std::size_t i = 0; i < points_.size(); ++i) cand.push_back({static_cast<int>(i), (points_[i] - q).norm()});
  }
  std::sort(cand.begin(), cand.end(), closer);
  if (cand.size() > kk) cand.resize(kk);
  return cand;
}

std::optional<Neighbor> VoxelHash::nearest_within(const Vec3& q, double radius) const {
  const auto found = radius_search(q, radius);
  if (found.empty()) return std::nullopt;
  return found.front();
}

std::vector<Vec3> SurfelCloud::positions() const {
  std::vector<Vec3> out;
  out.reserve(surfels_.size());
  for (const auto& s : surfels_) out.push_back(s.position);
  return out;
}

const VoxelHash& SurfelCloud::index() const {
  if (dirty_) {
    index_ = VoxelHash(index_cell_, positions());
    dirty_ = false;
  }
  return index_;
}

std::vector<std::vector<int>> voxel_groups(std::span<const Vec3> points, double cell) {
  if (!(cell > 0.0)) throw Error(ErrorCode::InvalidArgument, "voxel cell must be > 0");
  std::map<VoxelKey, std::vector<int>> groups;
  for (std::size_t i = 0; i < points.size(); ++i) groups[voxel_key(points[i], cell)].push_back(static_cast<int>(i));
  std::vector<std::vector<int>> out;
  out.reserve(groups.size());
  for (auto& [key, members] : groups) out.push_back(std::move(members));
  return out;
}

std::vector<Vec3> voxel_downsample(std::span<const Vec3> points, double cell) {
  std::vector<Vec3> out;
  for (const auto& members : voxel_groups(points, cell)) {
    Vec3 sum = Vec3::Zero();
    for (int i : members) sum += points[i];
    out.push_back(sum / static_cast<double>(members.size()));
  }
  return out;
}

void estimate_normals(SurfelCloud& cloud, int k) {
  const VoxelHash& index = cloud.index();
  const auto& pts = index.points();
  std::vector<Vec3> normals(pts.size());
  std::vector<char> ok(pts.size(), 0);
  parallel_for(0, pts.size(), [&](std::size_t i) {
    const auto nn = index.knn(pts[i], k);
    if (nn.size() < 3) return;
    Vec3 mean = Vec3::Zero();
    for (const auto& n : nn) mean += pts[n.index];
    mean /= static_cast<double>(nn.size());
    Mat3 cov = Mat3::Zero();
    for (const auto& n : nn) {
      const Vec3 d = pts[n.index] - mean;
      cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
    Vec3 normal = es.eigenvectors().col(0);
    if (normal.dot(pts[i]) > 0.0) normal = -normal;
    normals[i] = normal.normalized();
    ok[i] = 1;
  });
  auto& surfels = cloud.surfels();
  for (std::size_t i = 0; i < surfels.size(); ++i)
    if (ok[i]) surfels[i].normal = normals[i];
}

void transform(SurfelCloud& cloud, const RigidTransform& t) {
  for (auto& s : cloud.surfels()) {
    s.position = t(s.position);
    s.normal = t.rotation * s.normal;
  }
}

}  // namespace edfusion
