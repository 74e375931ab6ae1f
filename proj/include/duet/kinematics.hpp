#pragma once

#include <vector>

#include <Eigen/Core>

#include "duet/motion.hpp"
#include "duet/rotation6d.hpp"
#include "duet/skeleton.hpp"

namespace duet {

/// World-frame joint positions from root trajectory and local rotations.
/// rotations6d holds one 6-vector per non-root joint per frame;
/// root_rotations6d carries the root orientation. Child offsets are
/// rotated by the parent's world rotation.
inline Mat forward_kinematics(const Skeleton& skeleton, const Mat& root_positions,
                              const Mat& rotations6d, const Mat& root_rotations6d) {
  const int N = skeleton.joint_count;
  const int T = static_cast<int>(root_positions.rows());
  require<ShapeMismatch>(root_positions.cols() == 3, "root_positions must be T x 3");
  require<ShapeMismatch>(rotations6d.rows() == T && rotations6d.cols() == 6 * (N - 1),
                         "rotations6d must be T x 6(N-1)");
  require<ShapeMismatch>(root_rotations6d.rows() == T && root_rotations6d.cols() == 6,
                         "root_rotations6d must be T x 6");

  Mat positions(T, 3 * N);
  std::vector<Eigen::Matrix3d> world_rot(N);
  for (int t = 0; t < T; ++t) {
    world_rot[0] = rot6d_to_matrix(root_rotations6d.row(t).transpose());
    positions.row(t).segment<3>(0) = root_positions.row(t);
    for (int j = 1; j < N; ++j) {
      const int p = skeleton.parent_index[j];
      Eigen::Matrix3d local = rot6d_to_matrix(
          rotations6d.row(t).segment<6>(6 * (j - 1)).transpose());
      world_rot[j] = world_rot[p] * local;
      Eigen::Vector3d pos = positions.row(t).segment<3>(3 * p).transpose() +
                            world_rot[p] * skeleton.offsets.row(j).transpose();
      positions.row(t).segment<3>(3 * j) = pos.transpose();
    }
  }
  return positions;
}

/// Identity-rotation matrices for all non-root joints, T frames.
inline Mat identity_rotations(int joint_count, int frames) {
  Mat r(frames, 6 * (joint_count - 1));
  for (int t = 0; t < frames; ++t)
    for (int j = 0; j < joint_count - 1; ++j)
      r.row(t).segment<6>(6 * j) = identity_rot6d().transpose();
  return r;
}

inline Mat identity_root_rotations(int frames) {
  Mat r(frames, 6);
  for (int t = 0; t < frames; ++t) r.row(t) = identity_rot6d().transpose();
  return r;
}

}  // namespace duet
