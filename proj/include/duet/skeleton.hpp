#pragma once

#include <array>
#include <vector>

#include <Eigen/Core>

#include "duet/errors.hpp"

namespace duet {

/// Kinematic tree. Joint 0 is the root (parent index -1); every other
/// joint's parent index is smaller than its own index, so a single
/// forward pass over joints visits parents first.
struct Skeleton {
  int joint_count = 0;
  std::vector<int> parent_index;            // parent_index[0] == -1
  Eigen::Matrix<double, Eigen::Dynamic, 3> offsets;  // rest offset from parent, meters
  std::array<int, 4> foot_joint_ids{};      // left heel, left toe, right heel, right toe

  void validate() const {
    require<BadArgument>(joint_count >= 2, "skeleton needs at least 2 joints");
    require<BadArgument>(static_cast<int>(parent_index.size()) == joint_count,
                         "parent_index size mismatch");
    require<BadArgument>(offsets.rows() == joint_count, "offsets size mismatch");
    require<BadArgument>(parent_index[0] == -1, "joint 0 must be the root");
    for (int j = 1; j < joint_count; ++j) {
      require<BadArgument>(parent_index[j] >= 0 && parent_index[j] < j,
                           "parent index must precede child");
      require<BadArgument>(offsets.row(j).norm() > 0.0,
                           "non-root offsets must have positive length");
    }
    for (int k = 0; k < 4; ++k) {
      require<BadArgument>(foot_joint_ids[k] >= 0 && foot_joint_ids[k] < joint_count,
                           "foot joint id out of range");
      for (int l = 0; l < k; ++l)
        require<BadArgument>(foot_joint_ids[k] != foot_joint_ids[l],
                             "foot joint ids must be distinct");
    }
  }

  /// First two children of the root, used to derive a root-frame
  /// orientation from joint positions.
  std::array<int, 2> root_frame_children() const {
    std::array<int, 2> out{-1, -1};
    int found = 0;
    for (int j = 1; j < joint_count && found < 2; ++j)
      if (parent_index[j] == 0) out[found++] = j;
    require<BadArgument>(found == 2, "root needs at least two children");
    return out;
  }
};

/// Flat per-frame channel width: positions (3N) + velocities (3N) +
/// local 6D rotations for non-root joints (6(N-1)) + foot contacts (4).
inline int channels_per_frame(int joint_count) {
  return 3 * joint_count + 3 * joint_count + 6 * (joint_count - 1) + 4;
}

/// 22-joint humanoid used for procedural data. Y is up; the rest pose
/// faces +Z. Not claimed identical to any capture corpus convention.
inline Skeleton toy_skeleton() {
  Skeleton s;
  s.joint_count = 22;
  s.parent_index = {
      -1,       // 0 pelvis
      0, 1, 2, 3, 4,   // 1 spine1, 2 spine2, 3 chest, 4 neck, 5 head
      3, 6, 7,         // 6 l_shoulder, 7 l_elbow, 8 l_wrist
      3, 9, 10,        // 9 r_shoulder, 10 r_elbow, 11 r_wrist
      0, 12, 13, 14, 14,  // 12 l_hip, 13 l_knee, 14 l_ankle, 15 l_heel, 16 l_toe
      0, 17, 18, 19, 19,  // 17 r_hip, 18 r_knee, 19 r_ankle, 20 r_heel, 21 r_toe
  };
  s.offsets.resize(22, 3);
  auto set = [&](int j, double x, double y, double z) {
    s.offsets.row(j) << x, y, z;
  };
  set(0, 0.0, 0.0, 0.0);
  set(1, 0.0, 0.12, 0.0);
  set(2, 0.0, 0.14, 0.0);
  set(3, 0.0, 0.14, 0.0);
  set(4, 0.0, 0.12, 0.0);
  set(5, 0.0, 0.10, 0.0);
  set(6, 0.16, 0.05, 0.0);
  set(7, 0.28, 0.0, 0.0);
  set(8, 0.25, 0.0, 0.0);
  set(9, -0.16, 0.05, 0.0);
  set(10, -0.28, 0.0, 0.0);
  set(11, -0.25, 0.0, 0.0);
  set(12, 0.09, -0.06, 0.0);
  set(13, 0.0, -0.40, 0.0);
  set(14, 0.0, -0.40, 0.0);
  set(15, 0.0, -0.06, -0.05);
  set(16, 0.0, -0.06, 0.13);
  set(17, -0.09, -0.06, 0.0);
  set(18, 0.0, -0.40, 0.0);
  set(19, 0.0, -0.40, 0.0);
  set(20, 0.0, -0.06, -0.05);
  set(21, 0.0, -0.06, 0.13);
  s.foot_joint_ids = {15, 16, 20, 21};
  s.validate();
  return s;
}

}  // namespace duet
