#pragma once

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "duet/errors.hpp"
#include "duet/skeleton.hpp"

namespace duet {

using Mat = Eigen::MatrixXd;

/// One agent's motion. Frames are rows; per-frame joint data is stored
/// flat (joint j occupies columns [3j, 3j+3) of positions/velocities,
/// non-root joint j occupies columns [6(j-1), 6j) of rotations6d).
/// Velocities are backward differences in meters/frame with
/// velocities.row(0) == 0.
struct MotionSequence {
  int fps = 30;
  Mat positions;    // T x 3N, world frame
  Mat velocities;   // T x 3N
  Mat rotations6d;  // T x 6(N-1), local, non-root joints
  Mat contacts;     // T x 4, binary

  int frames() const { return static_cast<int>(positions.rows()); }
  int joints() const { return static_cast<int>(positions.cols()) / 3; }

  Eigen::Vector3d joint_position(int t, int j) const {
    return positions.row(t).segment<3>(3 * j).transpose();
  }

  /// Builds a sequence from positions, recomputing velocities.
  static MotionSequence from_parts(Mat positions, Mat rotations6d, Mat contacts,
                                   int fps = 30) {
    MotionSequence m;
    m.fps = fps;
    m.velocities = Mat::Zero(positions.rows(), positions.cols());
    for (int t = 1; t < positions.rows(); ++t)
      m.velocities.row(t) = positions.row(t) - positions.row(t - 1);
    m.positions = std::move(positions);
    m.rotations6d = std::move(rotations6d);
    m.contacts = std::move(contacts);
    return m;
  }
};

inline void validate_motion(const MotionSequence& m, double tol = 1e-6) {
  const int T = m.frames();
  const int N = m.joints();
  require<ShapeMismatch>(m.velocities.rows() == T && m.velocities.cols() == 3 * N,
                         "velocities shape");
  require<ShapeMismatch>(m.rotations6d.rows() == T && m.rotations6d.cols() == 6 * (N - 1),
                         "rotations6d shape");
  require<ShapeMismatch>(m.contacts.rows() == T && m.contacts.cols() == 4,
                         "contacts shape");
  if (T > 0)
    require<BadArgument>(m.velocities.row(0).cwiseAbs().maxCoeff() == 0.0,
                         "frame-0 velocity must be zero");
  for (int t = 1; t < T; ++t) {
    double err = (m.velocities.row(t) - (m.positions.row(t) - m.positions.row(t - 1)))
                     .cwiseAbs()
                     .maxCoeff();
    require<BadArgument>(err <= tol, "velocities inconsistent with positions");
  }
  for (int t = 0; t < T; ++t)
    for (int k = 0; k < 4; ++k) {
      double c = m.contacts(t, k);
      require<BadArgument>(c == 0.0 || c == 1.0, "contacts must be binary");
    }
}

enum class Provenance { real, synthetic_raw, synthetic_filtered };

inline const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::real: return "real";
    case Provenance::synthetic_raw: return "synthetic_raw";
    case Provenance::synthetic_filtered: return "synthetic_filtered";
  }
  return "unknown";
}

/// A two-agent interaction with at least one caption.
struct InteractionSample {
  MotionSequence agents[2];
  std::vector<std::string> captions;
  Provenance provenance = Provenance::real;

  int frames() const { return agents[0].frames(); }
  int joints() const { return agents[0].joints(); }
};

inline void validate_sample(const InteractionSample& s) {
  require<ShapeMismatch>(s.agents[0].frames() == s.agents[1].frames(),
                         "agents must share frame count");
  require<ShapeMismatch>(s.agents[0].joints() == s.agents[1].joints(),
                         "agents must share joint count");
  require<BadArgument>(s.agents[0].fps == s.agents[1].fps, "agents must share fps");
  require<BadArgument>(!s.captions.empty(), "sample needs at least one caption");
  validate_motion(s.agents[0]);
  validate_motion(s.agents[1]);
}

// -- flat per-frame representation ------------------------------------------

/// Column ranges of the flat layout for a given joint count.
struct ChannelLayout {
  int joints;
  int position_begin() const { return 0; }
  int velocity_begin() const { return 3 * joints; }
  int rotation_begin() const { return 6 * joints; }
  int contact_begin() const { return 6 * joints + 6 * (joints - 1); }
  int width() const { return channels_per_frame(joints); }
};

/// Packs (positions, recomputed velocities, rotations, contacts) into the
/// flat T x width representation. Width is 262 for 22 joints.
inline Mat build_representation(const Mat& positions, const Mat& rotations6d,
                                const Mat& contacts) {
  const int T = static_cast<int>(positions.rows());
  const int N = static_cast<int>(positions.cols()) / 3;
  require<ShapeMismatch>(positions.cols() == 3 * N && N >= 2, "positions shape");
  require<ShapeMismatch>(rotations6d.rows() == T && rotations6d.cols() == 6 * (N - 1),
                         "rotations6d shape");
  require<ShapeMismatch>(contacts.rows() == T && contacts.cols() == 4, "contacts shape");
  ChannelLayout lay{N};
  Mat flat(T, lay.width());
  flat.block(0, lay.position_begin(), T, 3 * N) = positions;
  flat.block(0, lay.velocity_begin(), T, 3 * N).setZero();
  for (int t = 1; t < T; ++t)
    flat.block(t, lay.velocity_begin(), 1, 3 * N) =
        positions.row(t) - positions.row(t - 1);
  flat.block(0, lay.rotation_begin(), T, 6 * (N - 1)) = rotations6d;
  flat.block(0, lay.contact_begin(), T, 4) = contacts;
  return flat;
}

inline Mat build_representation(const MotionSequence& m) {
  return build_representation(m.positions, m.rotations6d, m.contacts);
}

struct SplitRepresentation {
  Mat positions, velocities, rotations6d, contacts;
};

/// Inverse of build_representation; stored channels are copied verbatim.
inline SplitRepresentation split_representation(const Mat& flat, int joint_count = 22) {
  const int N = joint_count;
  ChannelLayout lay{N};
  require<ShapeMismatch>(flat.cols() == lay.width(), "flat width mismatch");
  const int T = static_cast<int>(flat.rows());
  SplitRepresentation out;
  out.positions = flat.block(0, lay.position_begin(), T, 3 * N);
  out.velocities = flat.block(0, lay.velocity_begin(), T, 3 * N);
  out.rotations6d = flat.block(0, lay.rotation_begin(), T, 6 * (N - 1));
  out.contacts = flat.block(0, lay.contact_begin(), T, 4);
  return out;
}

/// MotionSequence from a sampled flat representation: positions are taken
/// verbatim, velocities recomputed, contacts rounded to {0,1}.
inline MotionSequence motion_from_flat(const Mat& flat, int joint_count, int fps = 30) {
  SplitRepresentation s = split_representation(flat, joint_count);
  Mat contacts = s.contacts.unaryExpr([](double c) { return c > 0.5 ? 1.0 : 0.0; });
  return MotionSequence::from_parts(s.positions, s.rotations6d, contacts, fps);
}

// -- geometry ---------------------------------------------------------------

/// Per-frame Euclidean distances between every joint of agent a and every
/// joint of agent b: out[t](i, j) = ||a_i - b_j||.
inline std::vector<Mat> joint_pair_distances(const MotionSequence& a,
                                             const MotionSequence& b) {
  require<ShapeMismatch>(a.frames() == b.frames() && a.joints() == b.joints(),
                         "agents must share T and N");
  const int T = a.frames();
  const int N = a.joints();
  std::vector<Mat> out(T, Mat(N, N));
  for (int t = 0; t < T; ++t)
    for (int i = 0; i < N; ++i) {
      Eigen::Vector3d pi = a.joint_position(t, i);
      for (int j = 0; j < N; ++j)
        out[t](i, j) = (pi - b.joint_position(t, j)).norm();
    }
  return out;
}

/// Binary contact per foot joint: 1 iff the squared per-frame speed is
/// below velocity_threshold^2. Frame 0 copies frame 1.
inline Mat detect_foot_contacts(const Mat& positions, const Skeleton& skeleton,
                                double velocity_threshold) {
  const int T = static_cast<int>(positions.rows());
  require<ShapeMismatch>(T >= 2, "need at least 2 frames");
  require<ShapeMismatch>(positions.cols() == 3 * skeleton.joint_count,
                         "positions shape");
  const double thresh_sq = velocity_threshold * velocity_threshold;
  Mat contacts = Mat::Zero(T, 4);
  for (int t = 1; t < T; ++t)
    for (int k = 0; k < 4; ++k) {
      int j = skeleton.foot_joint_ids[k];
      double speed_sq = (positions.row(t).segment<3>(3 * j) -
                         positions.row(t - 1).segment<3>(3 * j))
                            .squaredNorm();
      contacts(t, k) = speed_sq < thresh_sq ? 1.0 : 0.0;
    }
  contacts.row(0) = contacts.row(1);
  return contacts;
}

/// Default squared-speed contact threshold is 0.002 m^2/frame^2.
inline double default_contact_threshold() { return std::sqrt(0.002); }

}  // namespace duet
