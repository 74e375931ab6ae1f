#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "duet/errors.hpp"
#include "duet/evaluator.hpp"
#include "duet/motion.hpp"
#include "duet/rng.hpp"

namespace duet {

struct FilterConfig {
  double cosine_threshold = 0.58;
  int k_neighbors = 20;
  double r_min = 0.35;
  double r_max = 0.6;

  void validate() const {
    require<BadArgument>(cosine_threshold > -1.0 && cosine_threshold < 1.0,
                         "cosine threshold must lie in (-1, 1)");
    require<BadArgument>(k_neighbors >= 1, "need at least one neighbor");
    require<BadArgument>(0.0 < r_min && r_min < r_max,
                         "annulus must satisfy 0 < r_min < r_max");
  }
};

/// How the annulus test consumes the held-out bank: `mean_of_k` keeps a
/// sample when its mean distance to its k nearest bank points lies in
/// [r_min, r_max]; `per_neighbor` anchors the k-NN search on each bank
/// point instead and keeps every generated sample that appears among some
/// bank point's k nearest with an in-annulus distance.
enum class AnnulusMode { mean_of_k, per_neighbor };

inline double knn_mean_distance(const Eigen::RowVectorXd& emb, const Mat& bank,
                                int k) {
  require<BadArgument>(bank.rows() > 0, "bank is empty");
  require<BadArgument>(k >= 1 && k <= bank.rows(),
                       "k must lie in [1, bank size]");
  require<ShapeMismatch>(emb.cols() == bank.cols(), "embedding width mismatch");
  std::vector<double> d(bank.rows());
  for (long r = 0; r < bank.rows(); ++r) d[r] = (bank.row(r) - emb).norm();
  std::nth_element(d.begin(), d.begin() + (k - 1), d.end());
  double total = 0;
  for (int i = 0; i < k; ++i) total += d[i];
  return total / k;
}

inline std::vector<int> knn_annulus_filter(const Mat& gen_embs, const Mat& bank,
                                           const FilterConfig& cfg,
                                           AnnulusMode mode = AnnulusMode::mean_of_k) {
  cfg.validate();
  require<BadArgument>(bank.rows() >= 1, "bank is empty");
  require<ShapeMismatch>(gen_embs.cols() == bank.cols(),
                         "embedding width mismatch");
  std::vector<int> kept;
  if (mode == AnnulusMode::mean_of_k) {
    require<BadArgument>(bank.rows() >= cfg.k_neighbors,
                         "bank smaller than k_neighbors");
    for (long i = 0; i < gen_embs.rows(); ++i) {
      const double mean =
          knn_mean_distance(gen_embs.row(i), bank, cfg.k_neighbors);
      if (cfg.r_min <= mean && mean <= cfg.r_max) kept.push_back(int(i));
    }
    return kept;
  }

  // Bank-anchored variant: each bank point endorses its in-annulus
  // nearest generated samples.
  std::vector<std::uint8_t> endorsed(gen_embs.rows(), 0);
  const int k = std::min<long>(cfg.k_neighbors, gen_embs.rows());
  std::vector<std::pair<double, long>> d(gen_embs.rows());
  for (long h = 0; h < bank.rows(); ++h) {
    for (long i = 0; i < gen_embs.rows(); ++i)
      d[i] = {(gen_embs.row(i) - bank.row(h)).norm(), i};
    std::partial_sort(d.begin(), d.begin() + k, d.end());
    for (int n = 0; n < k; ++n)
      if (cfg.r_min <= d[n].first && d[n].first <= cfg.r_max)
        endorsed[d[n].second] = 1;
  }
  for (long i = 0; i < gen_embs.rows(); ++i)
    if (endorsed[i]) kept.push_back(int(i));
  return kept;
}

/// Text-motion agreement scores for a batch of captioned samples.
inline std::vector<double> semantic_similarities(
    const std::vector<InteractionSample>& samples,
    EvaluatorParameters& evaluator) {
  std::vector<double> out;
  for (const auto& s : samples) {
    require<BadArgument>(!s.captions.empty(), "sample lacks a caption");
    auto prompt = embed_words(tokenize(s.captions[0]),
                              StubWordEmbedder(evaluator.config.text_width));
    Eigen::RowVectorXd text = encode_text_vector(prompt, evaluator);
    Eigen::RowVectorXd motion = encode_motion(s, evaluator);
    out.push_back(text.dot(motion));  // both unit norm: dot == cosine
  }
  return out;
}

inline std::vector<InteractionSample> semantic_filter(
    const std::vector<InteractionSample>& samples,
    EvaluatorParameters& evaluator, double threshold = 0.58) {
  require<BadArgument>(threshold > -1.0 && threshold < 1.0,
                       "cosine threshold must lie in (-1, 1)");
  std::vector<double> sims = semantic_similarities(samples, evaluator);
  std::vector<InteractionSample> kept;
  for (size_t i = 0; i < samples.size(); ++i)
    if (sims[i] >= threshold) kept.push_back(samples[i]);
  return kept;
}

/// Per-sample diagnostics plus the surviving set.
struct FilterOutcome {
  std::vector<InteractionSample> kept;
  std::vector<int> kept_indices;
  std::vector<double> cosine;             // per input sample
  std::vector<std::uint8_t> semantic_pass;
  std::vector<std::uint8_t> annulus_pass;
};

/// Dual-stage filter: semantic agreement with the caption and novelty
/// relative to the held-out embedding bank. Both predicates are pure and
/// per-sample, so the outcome is independent of evaluation order.
inline FilterOutcome filter_pipeline(
    const std::vector<InteractionSample>& samples,
    EvaluatorParameters& evaluator, const Mat& heldout_bank,
    const FilterConfig& cfg, AnnulusMode mode = AnnulusMode::mean_of_k) {
  cfg.validate();
  FilterOutcome out;
  if (samples.empty()) return out;

  out.cosine = semantic_similarities(samples, evaluator);
  Mat gen_embs(samples.size(), evaluator.config.embed_dim);
  for (size_t i = 0; i < samples.size(); ++i)
    gen_embs.row(i) = encode_motion(samples[i], evaluator);

  std::vector<int> annulus_kept =
      knn_annulus_filter(gen_embs, heldout_bank, cfg, mode);
  out.semantic_pass.assign(samples.size(), 0);
  out.annulus_pass.assign(samples.size(), 0);
  for (int i : annulus_kept) out.annulus_pass[i] = 1;
  for (size_t i = 0; i < samples.size(); ++i) {
    out.semantic_pass[i] = out.cosine[i] >= cfg.cosine_threshold ? 1 : 0;
    if (out.semantic_pass[i] && out.annulus_pass[i]) {
      out.kept_indices.push_back(int(i));
      out.kept.push_back(samples[i]);
      out.kept.back().provenance = Provenance::synthetic_filtered;
    }
  }
  return out;
}

}  // namespace duet
