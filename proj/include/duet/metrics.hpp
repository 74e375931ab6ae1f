#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "duet/errors.hpp"
#include "duet/rng.hpp"

namespace duet {

/// Sample covariance (divides by M - 1).
inline Mat sample_covariance(const Mat& x) {
  require<DatasetTooSmall>(x.rows() >= 2, "covariance needs at least 2 rows");
  Mat centered = x.rowwise() - x.colwise().mean();
  return centered.transpose() * centered / double(x.rows() - 1);
}

/// Square root of a symmetric PSD matrix by eigendecomposition; negative
/// eigenvalues from roundoff are clipped to zero.
inline Mat psd_sqrt(const Mat& sym) {
  Eigen::SelfAdjointEigenSolver<Mat> eig(0.5 * (sym + sym.transpose()));
  require<DegenerateCovariance>(eig.info() == Eigen::Success,
                                "eigendecomposition failed");
  Eigen::VectorXd roots = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * roots.asDiagonal() * eig.eigenvectors().transpose();
}

/// Fréchet distance between Gaussian fits of the two embedding clouds:
/// ||mu_r - mu_g||^2 + tr(S_r + S_g - 2 (S_r S_g)^{1/2}). Covariances are
/// regularized by 1e-6 I.
inline double fid(const Mat& real_embs, const Mat& gen_embs) {
  require<ShapeMismatch>(real_embs.cols() == gen_embs.cols(),
                         "embedding dims must match");
  require<DatasetTooSmall>(real_embs.rows() >= 2 && gen_embs.rows() >= 2,
                           "need at least 2 embeddings per side");
  require<DegenerateCovariance>(real_embs.allFinite() && gen_embs.allFinite(),
                                "embeddings must be finite");
  const long E = real_embs.cols();
  Eigen::RowVectorXd mu_r = real_embs.colwise().mean();
  Eigen::RowVectorXd mu_g = gen_embs.colwise().mean();
  Mat cov_r = sample_covariance(real_embs) + 1e-6 * Mat::Identity(E, E);
  Mat cov_g = sample_covariance(gen_embs) + 1e-6 * Mat::Identity(E, E);
  Mat half_r = psd_sqrt(cov_r);
  Mat cross = psd_sqrt(half_r * cov_g * half_r);
  double value = (mu_r - mu_g).squaredNorm() + cov_r.trace() + cov_g.trace() -
                 2.0 * cross.trace();
  require<DegenerateCovariance>(std::isfinite(value), "fid is not finite");
  return value;
}

struct RPrecisionRates {
  double top1 = 0, top2 = 0, top3 = 0;
};

/// For every motion, ranks its matched text among pool_size-1 random
/// distractor texts by Euclidean embedding distance. Rank counts only
/// strictly closer distractors, so exact ties resolve in favor of the
/// matched text.
inline RPrecisionRates r_precision(const Mat& text_embs, const Mat& motion_embs,
                                   int pool_size, Rng& rng) {
  require<ShapeMismatch>(text_embs.rows() == motion_embs.rows() &&
                             text_embs.cols() == motion_embs.cols(),
                         "embedding shapes must match");
  const long B = text_embs.rows();
  require<BadArgument>(pool_size >= 2, "pool needs at least 2 entries");
  require<DatasetTooSmall>(B >= pool_size, "fewer samples than pool size");

  std::vector<long> others(B - 1);
  RPrecisionRates rates;
  for (long i = 0; i < B; ++i) {
    long at = 0;
    for (long j = 0; j < B; ++j)
      if (j != i) others[at++] = j;
    // Partial Fisher-Yates: the first pool_size-1 entries become the pool.
    for (int k = 0; k < pool_size - 1; ++k) {
      std::uniform_int_distribution<long> pick(k, static_cast<long>(others.size()) - 1);
      std::swap(others[k], others[pick(rng)]);
    }
    const double d_true = (motion_embs.row(i) - text_embs.row(i)).norm();
    int closer = 0;
    for (int k = 0; k < pool_size - 1; ++k) {
      double d = (motion_embs.row(i) - text_embs.row(others[k])).norm();
      if (d < d_true) ++closer;
    }
    const int rank = closer + 1;
    rates.top1 += rank <= 1;
    rates.top2 += rank <= 2;
    rates.top3 += rank <= 3;
  }
  rates.top1 /= double(B);
  rates.top2 /= double(B);
  rates.top3 /= double(B);
  return rates;
}

/// Mean Euclidean distance between matched text/motion embedding pairs.
inline double mm_dist(const Mat& text_embs, const Mat& motion_embs) {
  require<ShapeMismatch>(text_embs.rows() == motion_embs.rows() &&
                             text_embs.cols() == motion_embs.cols(),
                         "embedding shapes must match");
  require<DatasetTooSmall>(text_embs.rows() >= 1, "need at least one pair");
  double total = 0;
  for (long i = 0; i < text_embs.rows(); ++i)
    total += (text_embs.row(i) - motion_embs.row(i)).norm();
  return total / double(text_embs.rows());
}

/// Mean distance over n_pairs random distinct embedding pairs.
inline double diversity(const Mat& embs, int n_pairs, Rng& rng) {
  require<DatasetTooSmall>(embs.rows() >= 2, "diversity needs >= 2 embeddings");
  require<BadArgument>(n_pairs >= 1, "need at least one pair");
  std::uniform_int_distribution<long> pick(0, embs.rows() - 1);
  double total = 0;
  for (int p = 0; p < n_pairs; ++p) {
    long i = pick(rng), j = pick(rng);
    while (j == i) j = pick(rng);
    total += (embs.row(i) - embs.row(j)).norm();
  }
  return total / double(n_pairs);
}

/// Mean distance over random same-prompt embedding pairs; each group
/// holds the embeddings generated for one prompt.
inline double multimodality(const std::vector<Mat>& per_prompt_embs, int n_pairs,
                            Rng& rng) {
  require<DatasetTooSmall>(!per_prompt_embs.empty(), "no prompt groups");
  for (const Mat& g : per_prompt_embs)
    require<DatasetTooSmall>(g.rows() >= 2, "prompt group needs >= 2 samples");
  require<BadArgument>(n_pairs >= 1, "need at least one pair");
  std::uniform_int_distribution<size_t> pick_group(0, per_prompt_embs.size() - 1);
  double total = 0;
  for (int p = 0; p < n_pairs; ++p) {
    const Mat& g = per_prompt_embs[pick_group(rng)];
    std::uniform_int_distribution<long> pick(0, g.rows() - 1);
    long i = pick(rng), j = pick(rng);
    while (j == i) j = pick(rng);
    total += (g.row(i) - g.row(j)).norm();
  }
  return total / double(n_pairs);
}

}  // namespace duet
