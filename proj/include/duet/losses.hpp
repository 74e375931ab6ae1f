#pragma once

#include <array>
#include <cmath>
#include <utility>

#include "duet/autodiff.hpp"
#include "duet/motion.hpp"
#include "duet/skeleton.hpp"

namespace duet {

/// Mixing weights for the training objective. The adaptive-interaction
/// epsilon softens the 1/(d+eps) pair weighting.
struct LossWeights {
  double base = 1.0;
  double vel = 1.0;
  double foot = 1.0;
  double bone = 1.0;
  double rel_orient = 1.0;
  double ada_interact = 1.0;
  double epsilon = 0.1;

  void validate() const {
    for (double w : {base, vel, foot, bone, rel_orient, ada_interact}) {
      require<BadArgument>(std::isfinite(w) && w >= 0.0,
                           "loss weights must be finite and nonnegative");
    }
    require<BadArgument>(std::isfinite(epsilon) && epsilon > 0.0,
                         "epsilon must be positive");
  }
};

struct LossTerms {
  double base = 0, vel = 0, foot = 0, bone = 0, rel_orient = 0,
         ada_interact = 0, total = 0;
};

/// Joint count implied by a flat representation width 12N - 2.
inline int joints_from_width(long width) {
  require<ShapeMismatch>((width + 2) % 12 == 0 && width >= 22,
                         "not a flat motion representation width");
  return static_cast<int>((width + 2) / 12);
}

namespace detail {

inline ad::Var positions_of(const ad::Var& flat) {
  const int N = joints_from_width(flat.cols());
  return ad::slice_cols(flat, 0, 3 * N);
}

inline Mat gt_contacts(const Mat& flat) {
  const int N = joints_from_width(flat.cols());
  ChannelLayout lay{N};
  return flat.middleCols(lay.contact_begin(), 4);
}

/// Orthonormal root axes per frame, derived from the root's first two
/// children by Gram-Schmidt.
inline std::array<ad::Var, 3> root_frame_axes(const ad::Var& positions,
                                              const Skeleton& skeleton) {
  auto kids = skeleton.root_frame_children();
  ad::Var root = ad::slice_cols(positions, 0, 3);
  ad::Var v1 = ad::sub(ad::slice_cols(positions, 3 * kids[0], 3), root);
  ad::Var v2 = ad::sub(ad::slice_cols(positions, 3 * kids[1], 3), root);
  ad::Var e1 = ad::l2_normalize_rows(v1);
  ad::Var p = ad::row_dot(e1, v2);
  ad::Var e2 = ad::l2_normalize_rows(ad::sub(v2, ad::col_mul(e1, p)));
  ad::Var e3 = ad::cross_rows(e1, e2);
  return {e1, e2, e3};
}

/// Relative orientation of agent B's root frame in agent A's, encoded as
/// the first two columns of the 3x3 relative rotation: T x 6.
inline ad::Var relative_orientation_6d(const ad::Var& pos_a, const ad::Var& pos_b,
                                       const Skeleton& skeleton) {
  auto e = root_frame_axes(pos_a, skeleton);
  auto f = root_frame_axes(pos_b, skeleton);
  return ad::concat_cols({ad::row_dot(e[0], f[0]), ad::row_dot(e[1], f[0]),
                          ad::row_dot(e[2], f[0]), ad::row_dot(e[0], f[1]),
                          ad::row_dot(e[1], f[1]), ad::row_dot(e[2], f[1])});
}

inline ad::Mask full_mask(const ad::Var& x, const ad::Mask& frame_mask) {
  if (!frame_mask.empty()) return frame_mask;
  return ad::Mask(x.rows(), 1);
}

}  // namespace detail

/// Mean squared error over valid frames, all channels, both agents.
inline ad::Var base_reconstruction(const ad::Var& x0_1, const ad::Var& x0_2,
                                   const ad::Var& xh_1, const ad::Var& xh_2,
                                   const ad::Mask& frame_mask = {}) {
  require<ShapeMismatch>(x0_1.rows() == xh_1.rows() && x0_1.cols() == xh_1.cols() &&
                             x0_2.rows() == xh_2.rows() &&
                             x0_2.cols() == xh_2.cols(),
                         "prediction shape mismatch");
  ad::Mask m = detail::full_mask(x0_1, frame_mask);
  ad::Var e1 = ad::masked_mean_all(ad::square(ad::sub(xh_1, x0_1)), m);
  ad::Var e2 = ad::masked_mean_all(ad::square(ad::sub(xh_2, x0_2)), m);
  return ad::scale(ad::add(e1, e2), 0.5);
}

/// MSE between predicted and ground-truth per-frame position differences,
/// averaged over agents.
inline ad::Var velocity_loss(const ad::Var& x0_1, const ad::Var& x0_2,
                             const ad::Var& xh_1, const ad::Var& xh_2,
                             const ad::Mask& frame_mask = {}) {
  ad::Mask m = detail::full_mask(x0_1, frame_mask);
  auto one = [&](const ad::Var& gt, const ad::Var& pred) {
    ad::Var dv = ad::sub(ad::temporal_diff(detail::positions_of(pred)),
                         ad::temporal_diff(detail::positions_of(gt)));
    return ad::masked_mean_all(ad::square(dv), m);
  };
  return ad::scale(ad::add(one(x0_1, xh_1), one(x0_2, xh_2)), 0.5);
}

/// Squared error between predicted and ground-truth foot velocity on
/// ground-truth contact frames, summed over feet and agents, averaged
/// over valid frames. When the true foot is stationary this reduces to
/// the classic squared predicted foot speed.
inline ad::Var foot_contact_loss(const ad::Var& x0_1, const ad::Var& x0_2,
                                 const ad::Var& xh_1, const ad::Var& xh_2,
                                 const Skeleton& skeleton,
                                 const ad::Mask& frame_mask = {}) {
  ad::Mask m = detail::full_mask(x0_1, frame_mask);
  auto one = [&](const ad::Var& gt, const ad::Var& pred) {
    Mat contacts = detail::gt_contacts(gt.value());
    Mat gt_speed;
    {
      ad::NoGradGuard guard;
      gt_speed = ad::temporal_diff(detail::positions_of(gt)).value();
    }
    ad::Var speed_err = ad::sub(ad::temporal_diff(detail::positions_of(pred)),
                                ad::Var::leaf(gt_speed));
    ad::Var total;
    for (int k = 0; k < 4; ++k) {
      ad::Var v = ad::slice_cols(speed_err, 3 * skeleton.foot_joint_ids[k], 3);
      ad::Var sq = ad::row_dot(v, v);
      ad::Var gated = ad::hadamard(sq, ad::Var::leaf(contacts.col(k)));
      ad::Var term = ad::masked_mean_all(gated, m);
      total = total.defined() ? ad::add(total, term) : term;
    }
    return total;
  };
  return ad::add(one(x0_1, xh_1), one(x0_2, xh_2));
}

/// Squared error between predicted and ground-truth bone lengths, summed
/// over bones and agents, averaged over valid frames.
inline ad::Var bone_length_loss(const ad::Var& x0_1, const ad::Var& x0_2,
                                const ad::Var& xh_1, const ad::Var& xh_2,
                                const Skeleton& skeleton,
                                const ad::Mask& frame_mask = {}) {
  ad::Mask m = detail::full_mask(x0_1, frame_mask);
  auto one = [&](const ad::Var& gt, const ad::Var& pred) {
    ad::Var lengths_pred = ad::bone_lengths(detail::positions_of(pred), skeleton);
    ad::Var lengths_gt;
    {
      ad::NoGradGuard guard;
      lengths_gt = ad::bone_lengths(detail::positions_of(gt), skeleton);
    }
    ad::Var err = ad::square(ad::sub(lengths_pred,
                                     ad::Var::leaf(lengths_gt.value())));
    // Column means over valid frames, then summed over bones.
    return ad::sum_all(ad::masked_mean_rows(err, m));
  };
  return ad::add(one(x0_1, xh_1), one(x0_2, xh_2));
}

/// MSE between predicted and ground-truth relative root orientation of
/// the two agents, in the 6D encoding.
inline ad::Var relative_orientation_loss(const ad::Var& x0_1, const ad::Var& x0_2,
                                         const ad::Var& xh_1, const ad::Var& xh_2,
                                         const Skeleton& skeleton,
                                         const ad::Mask& frame_mask = {}) {
  ad::Mask m = detail::full_mask(x0_1, frame_mask);
  ad::Var pred = detail::relative_orientation_6d(detail::positions_of(xh_1),
                                                 detail::positions_of(xh_2),
                                                 skeleton);
  ad::Var gt;
  {
    ad::NoGradGuard guard;
    gt = detail::relative_orientation_6d(detail::positions_of(x0_1),
                                         detail::positions_of(x0_2), skeleton);
  }
  return ad::masked_mean_all(ad::square(ad::sub(pred, ad::Var::leaf(gt.value()))),
                             m);
}

/// Inter-agent joint-pair distance supervision: each pair's absolute
/// distance error is weighted by 1/(d_gt + epsilon), so proximate pairs
/// dominate. The weight carries no gradient. Mean over valid frames and
/// the N^2 pairs.
inline ad::Var adaptive_interaction_loss(const ad::Var& x0_1, const ad::Var& x0_2,
                                         const ad::Var& xh_1, const ad::Var& xh_2,
                                         double epsilon = 0.1,
                                         const ad::Mask& frame_mask = {}) {
  require<BadArgument>(epsilon > 0.0, "epsilon must be positive");
  const int N = joints_from_width(x0_1.cols());
  require<ShapeMismatch>(x0_2.cols() == x0_1.cols() &&
                             xh_1.cols() == x0_1.cols() &&
                             xh_2.cols() == x0_1.cols(),
                         "representation widths must agree");
  ad::Mask m = detail::full_mask(x0_1, frame_mask);

  Mat d_gt;
  {
    ad::NoGradGuard guard;
    d_gt = ad::pairwise_distances(ad::Var::leaf(detail::positions_of(x0_1).value()),
                                  ad::Var::leaf(detail::positions_of(x0_2).value()),
                                  N)
               .value();
  }
  Mat weights = (d_gt.array() + epsilon).inverse();

  ad::Var d_pred = ad::pairwise_distances(detail::positions_of(xh_1),
                                          detail::positions_of(xh_2), N);
  ad::Var weighted =
      ad::hadamard(ad::Var::leaf(weights),
                   ad::abs(ad::sub(d_pred, ad::Var::leaf(d_gt))));
  return ad::masked_mean_all(weighted, m);
}

/// Unnormalized form of the adaptive interaction objective: the raw sum
/// of weighted absolute distance errors over valid frames and pairs.
inline double adaptive_interaction_sum(const Mat& x0_1, const Mat& x0_2,
                                       const Mat& xh_1, const Mat& xh_2,
                                       double epsilon = 0.1,
                                       const ad::Mask& frame_mask = {}) {
  require<BadArgument>(epsilon > 0.0, "epsilon must be positive");
  const int N = joints_from_width(x0_1.cols());
  double total = 0.0;
  for (long t = 0; t < x0_1.rows(); ++t) {
    if (!frame_mask.empty() && !frame_mask[t]) continue;
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < N; ++j) {
        double d = (x0_1.row(t).segment<3>(3 * i) -
                    x0_2.row(t).segment<3>(3 * j))
                       .norm();
        double dh = (xh_1.row(t).segment<3>(3 * i) -
                     xh_2.row(t).segment<3>(3 * j))
                        .norm();
        total += std::abs(d - dh) / (d + epsilon);
      }
  }
  return total;
}

/// Weighted sum of all terms with a per-term breakdown.
inline std::pair<ad::Var, LossTerms> total_loss(
    const ad::Var& x0_1, const ad::Var& x0_2, const ad::Var& xh_1,
    const ad::Var& xh_2, const Skeleton& skeleton, const LossWeights& weights,
    const ad::Mask& frame_mask = {}) {
  weights.validate();
  LossTerms terms;
  ad::Var total = ad::Var::leaf(Mat::Zero(1, 1));
  auto accumulate = [&](double w, ad::Var term, double& slot) {
    slot = term.value()(0, 0);
    if (w != 0.0) total = ad::add(total, ad::scale(term, w));
  };
  accumulate(weights.base, base_reconstruction(x0_1, x0_2, xh_1, xh_2, frame_mask),
             terms.base);
  accumulate(weights.vel, velocity_loss(x0_1, x0_2, xh_1, xh_2, frame_mask),
             terms.vel);
  accumulate(weights.foot,
             foot_contact_loss(x0_1, x0_2, xh_1, xh_2, skeleton, frame_mask),
             terms.foot);
  accumulate(weights.bone,
             bone_length_loss(x0_1, x0_2, xh_1, xh_2, skeleton, frame_mask),
             terms.bone);
  accumulate(weights.rel_orient,
             relative_orientation_loss(x0_1, x0_2, xh_1, xh_2, skeleton,
                                       frame_mask),
             terms.rel_orient);
  accumulate(weights.ada_interact,
             adaptive_interaction_loss(x0_1, x0_2, xh_1, xh_2, weights.epsilon,
                                       frame_mask),
             terms.ada_interact);
  terms.total = total.value()(0, 0);
  return {total, terms};
}

}  // namespace duet
