#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "duet/losses.hpp"
#include "testutil.hpp"

namespace ad = duet::ad;
using duet::Mat;
using testutil::five_joint_skeleton;
using testutil::random_flat;

namespace {

constexpr double kGradTol = 1e-6;

Mat rest_positions(const duet::Skeleton& s, int frames, double ox = 0.0,
                   double oz = 0.0) {
  Mat pos(frames, 3 * s.joint_count);
  for (int j = 0; j < s.joint_count; ++j) {
    Eigen::RowVector3d p(ox, 0.8, oz);
    int k = j;
    while (k != 0) {
      p += s.offsets.row(k);
      k = s.parent_index[k];
    }
    for (int t = 0; t < frames; ++t) pos.block<1, 3>(t, 3 * j) = p;
  }
  return pos;
}

Mat flat_from_positions(const Mat& positions, const duet::Skeleton& s,
                        const Mat& contacts) {
  const int T = static_cast<int>(positions.rows());
  Mat rots = Mat::Zero(T, 6 * (s.joint_count - 1));
  for (int j = 0; j < s.joint_count - 1; ++j) {
    rots.col(6 * j).setOnes();
    rots.col(6 * j + 4).setOnes();
  }
  return duet::build_representation(positions, rots, contacts);
}

Mat flat_from_positions(const Mat& positions, const duet::Skeleton& s) {
  return flat_from_positions(positions, s,
                             Mat::Zero(positions.rows(), 4));
}

ad::Var leaf(const Mat& m) { return ad::Var::leaf(m); }

}  // namespace

TEST(Losses, JointsFromWidth) {
  EXPECT_EQ(duet::joints_from_width(262), 22);
  EXPECT_EQ(duet::joints_from_width(58), 5);
  EXPECT_EQ(duet::joints_from_width(22), 2);
  EXPECT_THROW(duet::joints_from_width(23), duet::ShapeMismatch);
  EXPECT_THROW(duet::joints_from_width(10), duet::ShapeMismatch);
}

TEST(Losses, AllTermsZeroAtTruth) {
  duet::Rng rng(11);
  auto skel = five_joint_skeleton();
  Mat a = random_flat(rng, skel, 6);
  Mat b = random_flat(rng, skel, 6);
  auto [total, terms] = duet::total_loss(leaf(a), leaf(b), leaf(a), leaf(b),
                                         skel, duet::LossWeights{});
  EXPECT_EQ(terms.base, 0.0);
  EXPECT_EQ(terms.vel, 0.0);
  EXPECT_EQ(terms.foot, 0.0);
  EXPECT_EQ(terms.bone, 0.0);
  EXPECT_EQ(terms.rel_orient, 0.0);
  EXPECT_EQ(terms.ada_interact, 0.0);
  EXPECT_EQ(total.value()(0, 0), 0.0);
}

TEST(Losses, BaseReconstructionOffsetByOneIsOne) {
  duet::Rng rng(12);
  auto skel = five_joint_skeleton();
  Mat a = random_flat(rng, skel, 5);
  Mat b = random_flat(rng, skel, 5);
  Mat ah = a.array() + 1.0;
  Mat bh = b.array() + 1.0;
  ad::Var v = duet::base_reconstruction(leaf(a), leaf(b), leaf(ah), leaf(bh));
  EXPECT_NEAR(v.value()(0, 0), 1.0, 1e-12);
}

TEST(Losses, BaseReconstructionMatchesLoopOracle) {
  duet::Rng rng(13);
  auto skel = five_joint_skeleton();
  const int T = 7;
  Mat a = random_flat(rng, skel, T), b = random_flat(rng, skel, T);
  Mat ah = random_flat(rng, skel, T), bh = random_flat(rng, skel, T);
  ad::Mask mask{1, 1, 1, 0, 1, 0, 1};

  double sum = 0.0;
  long count = 0;
  for (int t = 0; t < T; ++t) {
    if (!mask[t]) continue;
    sum += (ah.row(t) - a.row(t)).array().square().sum();
    sum += (bh.row(t) - b.row(t)).array().square().sum();
    count += 2 * a.cols();
  }
  ad::Var v =
      duet::base_reconstruction(leaf(a), leaf(b), leaf(ah), leaf(bh), mask);
  EXPECT_NEAR(v.value()(0, 0), sum / static_cast<double>(count), 1e-9);
}

TEST(Losses, VelocityLossConstantDriftOracle) {
  auto skel = five_joint_skeleton();
  const int T = 4;
  Mat pos = rest_positions(skel, T);
  Mat drift = pos;
  for (int t = 0; t < T; ++t) drift.row(t).array() += 0.1 * t;
  Mat a = flat_from_positions(pos, skel), b = flat_from_positions(pos, skel);
  Mat ah = flat_from_positions(drift, skel);
  ad::Var v = duet::velocity_loss(leaf(a), leaf(b), leaf(ah), leaf(b));
  // Frames 1..T-1 carry a 0.1 diff error on every position channel; the
  // agent average halves it.
  EXPECT_NEAR(v.value()(0, 0), 0.5 * 0.01 * (T - 1) / T, 1e-12);
}

TEST(Losses, FootContactPenalizesSlidingOnContactFramesOnly) {
  auto skel = five_joint_skeleton();
  const int T = 8;
  Mat pos = rest_positions(skel, T);
  Mat contacts = Mat::Zero(T, 4);
  for (int t = 2; t <= 5; ++t) contacts(t, 0) = 1.0;  // foot joint 1

  Mat slid = pos;
  for (int t = 0; t < T; ++t) slid(t, 3 * skel.foot_joint_ids[0]) += 0.1 * t;
  Mat a = flat_from_positions(pos, skel, contacts);
  Mat b = flat_from_positions(pos, skel, contacts);
  Mat ah = flat_from_positions(slid, skel, contacts);

  ad::Var v =
      duet::foot_contact_loss(leaf(a), leaf(b), leaf(ah), leaf(b), skel);
  // Four contact frames each pay 0.1^2, averaged over eight frames.
  EXPECT_NEAR(v.value()(0, 0), 0.01 * 4.0 / 8.0, 1e-12);

  // The same slide with no labeled contacts costs nothing.
  Mat a0 = flat_from_positions(pos, skel);
  Mat ah0 = flat_from_positions(slid, skel);
  ad::Var v0 =
      duet::foot_contact_loss(leaf(a0), leaf(b), leaf(ah0), leaf(b), skel);
  EXPECT_EQ(v0.value()(0, 0), 0.0);

  // A moving ground-truth foot under contact is not penalized when the
  // prediction reproduces the same motion.
  Mat ag = flat_from_positions(slid, skel, contacts);
  ad::Var vg =
      duet::foot_contact_loss(leaf(ag), leaf(b), leaf(ag), leaf(b), skel);
  EXPECT_EQ(vg.value()(0, 0), 0.0);
}

TEST(Losses, BoneLengthStretchOracle) {
  auto skel = five_joint_skeleton();
  const int T = 3;
  Mat pos = rest_positions(skel, T);
  Mat stretched = pos;
  // Joint 3 sits 0.5 above its parent along y; push it 0.2 further out.
  for (int t = 0; t < T; ++t) stretched(t, 3 * 3 + 1) += 0.2;
  Mat a = flat_from_positions(pos, skel), b = flat_from_positions(pos, skel);
  Mat ah = flat_from_positions(stretched, skel);
  ad::Var v =
      duet::bone_length_loss(leaf(a), leaf(b), leaf(ah), leaf(b), skel);
  EXPECT_NEAR(v.value()(0, 0), 0.04, 1e-12);
}

TEST(Losses, RelativeOrientationIgnoresTranslation) {
  auto skel = five_joint_skeleton();
  const int T = 4;
  Mat p1 = rest_positions(skel, T, -0.6, 0.0);
  Mat p2 = rest_positions(skel, T, 0.6, 0.3);
  Mat p2_moved = p2;
  for (int j = 0; j < skel.joint_count; ++j) {
    p2_moved.col(3 * j).array() += 1.7;
    p2_moved.col(3 * j + 2).array() -= 0.9;
  }
  Mat a = flat_from_positions(p1, skel), b = flat_from_positions(p2, skel);
  Mat bh = flat_from_positions(p2_moved, skel);
  ad::Var v = duet::relative_orientation_loss(leaf(a), leaf(b), leaf(a),
                                              leaf(bh), skel);
  EXPECT_LE(v.value()(0, 0), 1e-9);
}

TEST(Losses, RelativeOrientationIgnoresSharedRotation) {
  auto skel = five_joint_skeleton();
  const int T = 3;
  Mat p1 = rest_positions(skel, T, -0.6, 0.1);
  Mat p2 = rest_positions(skel, T, 0.6, -0.2);
  Eigen::Matrix3d r =
      Eigen::AngleAxisd(0.7, Eigen::Vector3d(1, 2, 3).normalized())
          .toRotationMatrix();
  auto rotate_all = [&](const Mat& p) {
    Mat out = p;
    for (int t = 0; t < T; ++t)
      for (int j = 0; j < skel.joint_count; ++j)
        out.block<1, 3>(t, 3 * j) = (r * p.block<1, 3>(t, 3 * j).transpose())
                                        .transpose();
    return out;
  };
  Mat a = flat_from_positions(p1, skel), b = flat_from_positions(p2, skel);
  Mat ah = flat_from_positions(rotate_all(p1), skel);
  Mat bh = flat_from_positions(rotate_all(p2), skel);
  ad::Var v = duet::relative_orientation_loss(leaf(a), leaf(b), leaf(ah),
                                              leaf(bh), skel);
  EXPECT_LE(v.value()(0, 0), 1e-12);
}

TEST(Losses, RelativeOrientationDetectsRotation) {
  auto skel = five_joint_skeleton();
  const int T = 3;
  Mat p1 = rest_positions(skel, T, -0.6, 0.0);
  Mat p2 = rest_positions(skel, T, 0.6, 0.0);
  // Spin agent two a quarter turn about the vertical through its root.
  Mat p2_rot = p2;
  for (int t = 0; t < T; ++t) {
    Eigen::RowVector3d root = p2.block<1, 3>(t, 0);
    for (int j = 0; j < skel.joint_count; ++j) {
      Eigen::RowVector3d d = p2.block<1, 3>(t, 3 * j) - root;
      p2_rot.block<1, 3>(t, 3 * j) =
          root + Eigen::RowVector3d(d.z(), d.y(), -d.x());
    }
  }
  Mat a = flat_from_positions(p1, skel), b = flat_from_positions(p2, skel);
  Mat bh = flat_from_positions(p2_rot, skel);
  ad::Var v = duet::relative_orientation_loss(leaf(a), leaf(b), leaf(a),
                                              leaf(bh), skel);
  EXPECT_GT(v.value()(0, 0), 1e-3);
}

TEST(Losses, AdaptiveInteractionTwoJointHandCase) {
  const int T = 1, width = 22;  // two joints per agent
  Mat a = Mat::Zero(T, width), b = Mat::Zero(T, width);
  a.row(0).segment<3>(0) << 0, 0, 0;
  a.row(0).segment<3>(3) << 1, 0, 0;
  b.row(0).segment<3>(0) << 0, 1, 0;
  b.row(0).segment<3>(3) << 1, 1, 0;
  Mat bh = b;
  bh.row(0).segment<3>(0) << 0, 1.5, 0;
  bh.row(0).segment<3>(3) << 1, 1.5, 0;

  const double s2 = std::sqrt(2.0), s325 = std::sqrt(3.25);
  const double expected_sum =
      2.0 * std::abs(1.5 - 1.0) / (1.0 + 0.1) +
      2.0 * std::abs(s325 - s2) / (s2 + 0.1);
  ad::Var v =
      duet::adaptive_interaction_loss(leaf(a), leaf(b), leaf(a), leaf(bh));
  EXPECT_NEAR(v.value()(0, 0), expected_sum / 4.0, 1e-12);
  EXPECT_NEAR(duet::adaptive_interaction_sum(a, b, a, bh), expected_sum, 1e-12);
}

TEST(Losses, AdaptiveInteractionNormalizationMatchesRawSum) {
  duet::Rng rng(21);
  std::uniform_int_distribution<int> pick_t(1, 4), pick_n(2, 5);
  std::bernoulli_distribution coin(0.5);
  for (int trial = 0; trial < 50; ++trial) {
    const int T = pick_t(rng), N = pick_n(rng);
    const int width = 12 * N - 2;
    Mat a = Mat::Zero(T, width), b = Mat::Zero(T, width);
    Mat ah = Mat::Zero(T, width), bh = Mat::Zero(T, width);
    a.leftCols(3 * N) = duet::random_normal(rng, T, 3 * N);
    b.leftCols(3 * N) = duet::random_normal(rng, T, 3 * N);
    ah.leftCols(3 * N) = duet::random_normal(rng, T, 3 * N);
    bh.leftCols(3 * N) = duet::random_normal(rng, T, 3 * N);
    ad::Mask mask(T, 0);
    long valid = 0;
    for (int t = 0; t < T; ++t) {
      mask[t] = coin(rng) ? 1 : 0;
      valid += mask[t];
    }
    if (valid == 0) {
      mask[0] = 1;
      valid = 1;
    }
    double raw = duet::adaptive_interaction_sum(a, b, ah, bh, 0.1, mask);
    ad::Var norm = duet::adaptive_interaction_loss(leaf(a), leaf(b), leaf(ah),
                                                   leaf(bh), 0.1, mask);
    EXPECT_NEAR(norm.value()(0, 0),
                raw / static_cast<double>(valid * N * N), 1e-9);
  }
}

TEST(Losses, AdaptiveWeightShrinksWithDistance) {
  const int width = 22;
  const double delta = 0.2;
  auto loss_at = [&](double d) {
    Mat a = Mat::Zero(1, width), b = Mat::Zero(1, width), bh = Mat::Zero(1, width);
    b(0, 0) = d;
    b(0, 3) = d;
    bh(0, 0) = d + delta;
    bh(0, 3) = d + delta;
    ad::Var v =
        duet::adaptive_interaction_loss(leaf(a), leaf(b), leaf(a), leaf(bh));
    return v.value()(0, 0);
  };
  EXPECT_NEAR(loss_at(0.5), delta / 0.6, 1e-12);
  EXPECT_NEAR(loss_at(1.0), delta / 1.1, 1e-12);
  EXPECT_NEAR(loss_at(2.0), delta / 2.1, 1e-12);
  EXPECT_GT(loss_at(0.5), loss_at(1.0));
  EXPECT_GT(loss_at(1.0), loss_at(2.0));
}

TEST(Losses, AdaptiveInteractionRejectsBadEpsilon) {
  Mat a = Mat::Zero(1, 22);
  EXPECT_THROW(
      duet::adaptive_interaction_loss(leaf(a), leaf(a), leaf(a), leaf(a), 0.0),
      duet::BadArgument);
  EXPECT_THROW(
      duet::adaptive_interaction_loss(leaf(a), leaf(a), leaf(a), leaf(a), -1.0),
      duet::BadArgument);
}

TEST(Losses, MaskedTailMatchesTruncatedSequence) {
  duet::Rng rng(31);
  auto skel = five_joint_skeleton();
  const int T = 8, T_valid = 5;
  Mat a = random_flat(rng, skel, T), b = random_flat(rng, skel, T);
  Mat ah = random_flat(rng, skel, T), bh = random_flat(rng, skel, T);
  // Poison the tail: results must not depend on it.
  a.bottomRows(T - T_valid).setConstant(1e6);
  ah.bottomRows(T - T_valid).setConstant(-1e6);
  ad::Mask mask(T, 0);
  for (int t = 0; t < T_valid; ++t) mask[t] = 1;

  duet::LossWeights w;
  auto [total_masked, terms_masked] =
      duet::total_loss(leaf(a), leaf(b), leaf(ah), leaf(bh), skel, w, mask);

  Mat at = a.topRows(T_valid), bt = b.topRows(T_valid);
  Mat aht = ah.topRows(T_valid), bht = bh.topRows(T_valid);
  auto [total_cut, terms_cut] =
      duet::total_loss(leaf(at), leaf(bt), leaf(aht), leaf(bht), skel, w);

  EXPECT_NEAR(terms_masked.base, terms_cut.base, 1e-12);
  EXPECT_NEAR(terms_masked.vel, terms_cut.vel, 1e-12);
  EXPECT_NEAR(terms_masked.foot, terms_cut.foot, 1e-12);
  EXPECT_NEAR(terms_masked.bone, terms_cut.bone, 1e-12);
  EXPECT_NEAR(terms_masked.rel_orient, terms_cut.rel_orient, 1e-12);
  EXPECT_NEAR(terms_masked.ada_interact, terms_cut.ada_interact, 1e-12);
  EXPECT_NEAR(total_masked.value()(0, 0), total_cut.value()(0, 0), 1e-10);
}

TEST(Losses, TotalLossBreakdownSumsExactly) {
  duet::Rng rng(41);
  auto skel = five_joint_skeleton();
  Mat a = random_flat(rng, skel, 6), b = random_flat(rng, skel, 6);
  Mat ah = random_flat(rng, skel, 6), bh = random_flat(rng, skel, 6);
  duet::LossWeights w;
  w.base = 0.3;
  w.vel = 0.7;
  w.foot = 1.3;
  w.bone = 0.9;
  w.rel_orient = 1.1;
  w.ada_interact = 2.0;
  auto [total, terms] =
      duet::total_loss(leaf(a), leaf(b), leaf(ah), leaf(bh), skel, w);
  double expected = w.base * terms.base + w.vel * terms.vel +
                    w.foot * terms.foot + w.bone * terms.bone +
                    w.rel_orient * terms.rel_orient +
                    w.ada_interact * terms.ada_interact;
  EXPECT_NEAR(total.value()(0, 0), expected, 1e-12);
  EXPECT_EQ(terms.total, total.value()(0, 0));
}

TEST(Losses, TotalLossZeroWeightsDropTermsFromGraph) {
  duet::Rng rng(42);
  auto skel = five_joint_skeleton();
  Mat a = random_flat(rng, skel, 4), b = random_flat(rng, skel, 4);
  Mat ah = random_flat(rng, skel, 4), bh = random_flat(rng, skel, 4);

  duet::LossWeights none;
  none.base = none.vel = none.foot = none.bone = none.rel_orient =
      none.ada_interact = 0.0;
  auto [zero_total, zero_terms] =
      duet::total_loss(leaf(a), leaf(b), leaf(ah), leaf(bh), skel, none);
  EXPECT_EQ(zero_total.value()(0, 0), 0.0);
  EXPECT_GT(zero_terms.base, 0.0);  // breakdown still reported

  duet::LossWeights only_ada = none;
  only_ada.ada_interact = 1.0;
  auto [ada_total, ada_terms] =
      duet::total_loss(leaf(a), leaf(b), leaf(ah), leaf(bh), skel, only_ada);
  ad::Var direct = duet::adaptive_interaction_loss(leaf(a), leaf(b), leaf(ah),
                                                   leaf(bh), only_ada.epsilon);
  EXPECT_EQ(ada_total.value()(0, 0), direct.value()(0, 0));
  EXPECT_EQ(ada_terms.ada_interact, direct.value()(0, 0));
}

TEST(Losses, RejectsNegativeWeights) {
  auto skel = five_joint_skeleton();
  Mat a = Mat::Zero(2, 58);
  duet::LossWeights w;
  w.vel = -0.5;
  EXPECT_THROW(
      duet::total_loss(leaf(a), leaf(a), leaf(a), leaf(a), skel, w),
      duet::BadArgument);
}

// -- finite-difference gradient checks ---------------------------------------

class LossGradients : public ::testing::Test {
 protected:
  void SetUp() override {
    duet::Rng rng(77);
    skel_ = five_joint_skeleton();
    gt1_ = random_flat(rng, skel_, 4);
    gt2_ = random_flat(rng, skel_, 4);
    pred1_ = gt1_ + 0.3 * duet::random_normal(rng, 4, 58);
    pred2_ = gt2_ + 0.3 * duet::random_normal(rng, 4, 58);
    mask_ = {1, 1, 1, 0};
  }

  double check(const std::function<ad::Var(const ad::Var&, const ad::Var&)>& f) {
    return testutil::fd_check(
        [&](std::vector<ad::Var>& leaves) { return f(leaves[0], leaves[1]); },
        {pred1_, pred2_});
  }

  duet::Skeleton skel_;
  Mat gt1_, gt2_, pred1_, pred2_;
  ad::Mask mask_;
};

TEST_F(LossGradients, BaseReconstruction) {
  EXPECT_LE(check([&](const ad::Var& p1, const ad::Var& p2) {
              return duet::base_reconstruction(leaf(gt1_), leaf(gt2_), p1, p2,
                                               mask_);
            }),
            kGradTol);
}

TEST_F(LossGradients, Velocity) {
  EXPECT_LE(check([&](const ad::Var& p1, const ad::Var& p2) {
              return duet::velocity_loss(leaf(gt1_), leaf(gt2_), p1, p2, mask_);
            }),
            kGradTol);
}

TEST_F(LossGradients, FootContact) {
  EXPECT_LE(check([&](const ad::Var& p1, const ad::Var& p2) {
              return duet::foot_contact_loss(leaf(gt1_), leaf(gt2_), p1, p2,
                                             skel_, mask_);
            }),
            kGradTol);
}

TEST_F(LossGradients, BoneLength) {
  EXPECT_LE(check([&](const ad::Var& p1, const ad::Var& p2) {
              return duet::bone_length_loss(leaf(gt1_), leaf(gt2_), p1, p2,
                                            skel_, mask_);
            }),
            kGradTol);
}

TEST_F(LossGradients, RelativeOrientation) {
  EXPECT_LE(check([&](const ad::Var& p1, const ad::Var& p2) {
              return duet::relative_orientation_loss(leaf(gt1_), leaf(gt2_), p1,
                                                     p2, skel_, mask_);
            }),
            kGradTol);
}

TEST_F(LossGradients, AdaptiveInteraction) {
  EXPECT_LE(check([&](const ad::Var& p1, const ad::Var& p2) {
              return duet::adaptive_interaction_loss(leaf(gt1_), leaf(gt2_), p1,
                                                     p2, 0.1, mask_);
            }),
            kGradTol);
}

TEST_F(LossGradients, WeightedTotal) {
  duet::LossWeights w;
  w.base = 0.5;
  w.vel = 1.5;
  w.foot = 0.25;
  w.bone = 2.0;
  w.rel_orient = 0.75;
  w.ada_interact = 1.25;
  EXPECT_LE(check([&](const ad::Var& p1, const ad::Var& p2) {
              return duet::total_loss(leaf(gt1_), leaf(gt2_), p1, p2, skel_, w,
                                      mask_)
                  .first;
            }),
            kGradTol);
}
