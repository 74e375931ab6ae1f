#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "duet/errors.hpp"

namespace duet {

using Vec6 = Eigen::Matrix<double, 6, 1>;

/// Recover a rotation matrix from its continuous 6D embedding (the first
/// two columns, re-orthonormalized by Gram-Schmidt; the third column is
/// their cross product).
inline Eigen::Matrix3d rot6d_to_matrix(const Vec6& r) {
  Eigen::Vector3d a = r.head<3>();
  Eigen::Vector3d b = r.tail<3>();
  double na = a.norm();
  if (na < 1e-8) throw DegenerateRotation("first 6D column has near-zero norm");
  Eigen::Vector3d c0 = a / na;
  Eigen::Vector3d res = b - c0.dot(b) * c0;
  double nr = res.norm();
  if (nr < 1e-8) throw DegenerateRotation("6D columns are near-collinear");
  Eigen::Vector3d c1 = res / nr;
  Eigen::Vector3d c2 = c0.cross(c1);
  Eigen::Matrix3d R;
  R.col(0) = c0;
  R.col(1) = c1;
  R.col(2) = c2;
  return R;
}

/// Inverse embedding: the first two columns, flattened.
inline Vec6 matrix_to_rot6d(const Eigen::Matrix3d& R) {
  const double tol = 1e-4;
  if ((R.transpose() * R - Eigen::Matrix3d::Identity()).norm() > tol ||
      std::abs(R.determinant() - 1.0) > tol)
    throw NotARotation("input is not a proper rotation");
  Vec6 r;
  r.head<3>() = R.col(0);
  r.tail<3>() = R.col(1);
  return r;
}

inline Vec6 identity_rot6d() {
  Vec6 r;
  r << 1, 0, 0, 0, 1, 0;
  return r;
}

}  // namespace duet
