#pragma once

#include <cmath>
#include <vector>

#include "duet/autodiff.hpp"
#include "duet/errors.hpp"
#include "duet/rng.hpp"

namespace duet {

/// Per-channel mean and standard deviation of the flat representation,
/// computed over the training split. Standard deviations are floored so
/// normalization never divides by ~0.
struct ChannelStats {
  Mat mean;  // 1 x C
  Mat std;   // 1 x C

  static constexpr double kStdFloor = 1e-6;

  int width() const { return static_cast<int>(mean.cols()); }

  void validate() const {
    require<ShapeMismatch>(mean.rows() == 1 && std.rows() == 1 &&
                               mean.cols() == std.cols() && mean.cols() > 0,
                           "stats must be matching 1 x C rows");
    for (long c = 0; c < std.cols(); ++c) {
      require<BadArgument>(std::isfinite(mean(0, c)) && std::isfinite(std(0, c)) &&
                               std(0, c) >= kStdFloor,
                           "stats must be finite with std >= floor");
    }
  }

  static ChannelStats identity(int width) {
    require<BadArgument>(width > 0, "width must be positive");
    return {Mat::Zero(1, width), Mat::Ones(1, width)};
  }

  /// Population moments pooled over every row of every given matrix.
  static ChannelStats compute(const std::vector<Mat>& mats) {
    require<BadArgument>(!mats.empty(), "stats need at least one matrix");
    const long C = mats[0].cols();
    long rows = 0;
    Mat sum = Mat::Zero(1, C), sq = Mat::Zero(1, C);
    for (const Mat& m : mats) {
      require<ShapeMismatch>(m.cols() == C, "stats width mismatch");
      rows += m.rows();
      sum += m.colwise().sum();
      sq += m.array().square().matrix().colwise().sum();
    }
    require<BadArgument>(rows > 0, "stats need at least one frame");
    ChannelStats s;
    s.mean = sum / static_cast<double>(rows);
    Mat var = sq / static_cast<double>(rows) - s.mean.array().square().matrix();
    s.std = var.array().max(0.0).sqrt().max(kStdFloor);
    return s;
  }
};

inline Mat normalize_rows(const Mat& x, const ChannelStats& stats) {
  stats.validate();
  require<ShapeMismatch>(x.cols() == stats.mean.cols(), "normalize width");
  Mat centered = x.rowwise() - stats.mean.row(0);
  return (centered.array().rowwise() / stats.std.row(0).array()).matrix();
}

inline Mat denormalize_rows(const Mat& x, const ChannelStats& stats) {
  stats.validate();
  require<ShapeMismatch>(x.cols() == stats.mean.cols(), "denormalize width");
  return (x.array().rowwise() * stats.std.row(0).array()).matrix().rowwise() +
         stats.mean.row(0);
}

/// Differentiable denormalization for losses that need metric geometry.
inline ad::Var denormalize(const ad::Var& x, const ChannelStats& stats) {
  stats.validate();
  require<ShapeMismatch>(x.cols() == stats.mean.cols(), "denormalize width");
  return ad::bias_add(ad::row_mul(x, ad::Var::leaf(stats.std)),
                      ad::Var::leaf(stats.mean));
}

}  // namespace duet
