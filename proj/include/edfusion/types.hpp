#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace edfusion {

template <typename Scalar>
using Vec2T = Eigen::Matrix<Scalar, 2, 1>;
template <typename Scalar>
using Vec3T = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Mat3T = Eigen::Matrix<Scalar, 3, 3>;

using Vec2 = Vec2T<double>;
using Vec3 = Vec3T<double>;
using Mat3 = Mat3T<double>;
using VecX = Eigen::VectorXd;

// Mat3 follows Eigen's (row, col) indexing. Wherever a Mat3 is flattened into
// a parameter vector it is stored row-major: A(r, c) -> slot 3 * r + c.
// The columns c1, c2, c3 used by the orthonormality residuals are A.col(0..2).

using Rgb8 = std::array<std::uint8_t, 3>;

/// Continuous pixel position, x to the right, y down. Integer pixel centers.
struct PixelCoord {
  double x = 0.0;
  double y = 0.0;
};

/// Proper rigid motion: p' = rotation * p + translation.
struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  template <typename Derived>
  Vec3 operator()(const Eigen::MatrixBase<Derived>& p) const {
    return rotation * p + translation;
  }

  RigidTransform inverse() const {
    RigidTransform inv;
    inv.rotation = rotation.transpose();
    inv.translation = -(inv.rotation * translation);
    return inv;
  }

  /// (*this) after `rhs`: x -> this(rhs(x)).
  RigidTransform operator*(const RigidTransform& rhs) const {
    RigidTransform out;
    out.rotation = rotation * rhs.rotation;
    out.translation = rotation * rhs.translation + translation;
    return out;
  }
};

inline bool is_rotation(const Mat3& r, double tol = 1e-9) {
  return (r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() < tol && r.determinant() > 0.0;
}

inline double rotation_angle_deg(const Mat3& r) {
  const double c = std::clamp((r.trace() - 1.0) * 0.5, -1.0, 1.0);
  return std::acos(c) * 180.0 / EIGEN_PI;
}

inline RigidTransform rigid_from_euler_deg(double rx, double ry, double rz, const Vec3& t) {
  constexpr double k = EIGEN_PI / 180.0;
  RigidTransform out;
  out.rotation = (Eigen::AngleAxisd(rz * k, Vec3::UnitZ()) * Eigen::AngleAxisd(ry * k, Vec3::UnitY()) *
                  Eigen::AngleAxisd(rx * k, Vec3::UnitX()))
                     .toRotationMatrix();
  out.translation = t;
  return out;
}

}  // namespace edfusion
