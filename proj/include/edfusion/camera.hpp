#pragma once

#include <cmath>
#include <optional>

#include "edfusion/types.hpp"

namespace edfusion {

/// Pinhole intrinsics. Pixel (i, j) has its center at x = i, y = j and covers
/// [i - 0.5, i + 0.5) x [j - 0.5, j + 0.5).
struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  /// Throws Error(InvalidArgument) unless fx, fy > 0 and the principal point
  /// lies inside the image.
  void validate() const;

  bool contains(const PixelCoord& p) const {
    return p.x >= -0.5 && p.y >= -0.5 && p.x < width - 0.5 && p.y < height - 0.5;
  }
};

/// Integer pixel nearest to a continuous coordinate.
struct PixelIndex {
  int x = 0;
  int y = 0;
};

inline PixelIndex nearest_pixel(const PixelCoord& p) {
  return {static_cast<int>(std::floor(p.x + 0.5)), static_cast<int>(std::floor(p.y + 0.5))};
}

/// Unbounded pinhole projection; requires z > 0.
template <typename Derived>
Vec2T<typename Derived::Scalar> project_unchecked(const CameraIntrinsics& intr,
                                                   const Eigen::MatrixBase<Derived>& v) {
  using S = typename Derived::Scalar;
  return {S(intr.fx) * v.x() / v.z() + S(intr.cx), S(intr.fy) * v.y() / v.z() + S(intr.cy)};
}

/// P(v): pixel of a camera-space point, empty behind the camera or outside the image.
template <typename Derived>
std::optional<PixelCoord> project(const CameraIntrinsics& intr, const Eigen::MatrixBase<Derived>& v) {
  if (!(v.z() > 0)) return std::nullopt;
  const auto uv = project_unchecked(intr, v);
  const PixelCoord p{double(uv.x()), double(uv.y())};
  if (!intr.contains(p)) return std::nullopt;
  return p;
}

/// Pi(u): lift a pixel with depth d (mm) to camera space.
template <typename Scalar>
Vec3T<Scalar> back_project(const CameraIntrinsics& intr, const PixelCoord& p, Scalar d) {
  return {(Scalar(p.x) - Scalar(intr.cx)) * d / Scalar(intr.fx), (Scalar(p.y) - Scalar(intr.cy)) * d / Scalar(intr.fy),
          d};
}

}  // namespace edfusion
