#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "duet/denoiser.hpp"
#include "duet/losses.hpp"
#include "duet/normalize.hpp"
#include "duet/optimizer.hpp"
#include "duet/schedule.hpp"
#include "duet/text.hpp"

namespace duet {

/// One collated training example: both agents' flat representations in
/// normalized space, the embedded prompt, and a frame-validity mask
/// (empty = every frame valid). Items in a batch share T.
struct TrainItem {
  Mat x1, x2;
  TokenizedPrompt prompt;
  ad::Mask frame_mask;
};

enum class TrainMode {
  duet,      // both agents noised and reconstructed
  reaction,  // agent 1 stays clean and is excluded from reconstruction
};

inline const char* to_string(TrainMode m) {
  return m == TrainMode::duet ? "duet" : "reaction";
}

struct TrainConfig {
  TrainMode mode = TrainMode::duet;
  double p_uncond = 0.1;  // prompt-drop probability for guidance training
  LossWeights loss_weights;
  /// When present, geometry-based terms are computed after undoing this
  /// normalization; base/velocity stay in normalized space.
  std::optional<ChannelStats> stats;

  void validate() const {
    require<BadArgument>(p_uncond >= 0.0 && p_uncond <= 1.0,
                         "p_uncond must lie in [0, 1]");
    loss_weights.validate();
    if (stats) stats->validate();
  }
};

/// Per-item randomness of one training step, drawn up front so the loss
/// is a deterministic function of (batch, prepared, params).
struct PreparedItem {
  int t;
  Mat noise1, noise2;
  bool drop_prompt;
};

inline std::vector<PreparedItem> prepare_batch(const std::vector<TrainItem>& batch,
                                               const DiffusionSchedule& schedule,
                                               double p_uncond, Rng& rng) {
  require<BadArgument>(!batch.empty(), "batch must be nonempty");
  std::uniform_int_distribution<int> pick_t(0, schedule.steps - 1);
  std::bernoulli_distribution drop(p_uncond);
  std::vector<PreparedItem> out;
  out.reserve(batch.size());
  for (const auto& item : batch) {
    PreparedItem p;
    p.t = pick_t(rng);
    p.noise1 = random_normal(rng, item.x1.rows(), item.x1.cols());
    p.noise2 = random_normal(rng, item.x2.rows(), item.x2.cols());
    p.drop_prompt = p_uncond > 0.0 && drop(rng);
    out.push_back(std::move(p));
  }
  return out;
}

/// Training objective for one item: reconstruction and velocity in the
/// (possibly normalized) model space, geometric terms in meters.
inline std::pair<ad::Var, LossTerms> training_loss(
    const ad::Var& x0_1, const ad::Var& x0_2, const ad::Var& xh_1,
    const ad::Var& xh_2, const Skeleton& skeleton, const LossWeights& weights,
    const std::optional<ChannelStats>& stats, const ad::Mask& frame_mask = {}) {
  weights.validate();
  auto metric = [&](const ad::Var& x) {
    return stats ? denormalize(x, *stats) : x;
  };
  ad::Var g1 = metric(x0_1), g2 = metric(x0_2);
  ad::Var h1 = metric(xh_1), h2 = metric(xh_2);

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
             foot_contact_loss(g1, g2, h1, h2, skeleton, frame_mask), terms.foot);
  accumulate(weights.bone,
             bone_length_loss(g1, g2, h1, h2, skeleton, frame_mask), terms.bone);
  accumulate(weights.rel_orient,
             relative_orientation_loss(g1, g2, h1, h2, skeleton, frame_mask),
             terms.rel_orient);
  accumulate(weights.ada_interact,
             adaptive_interaction_loss(g1, g2, h1, h2, weights.epsilon,
                                       frame_mask),
             terms.ada_interact);
  terms.total = total.value()(0, 0);
  return {total, terms};
}

struct StepStats {
  LossTerms terms;  // batch means
  int batch_size = 0;
};

/// Batch objective as a graph over the parameters. Deterministic given
/// the prepared randomness.
inline std::pair<ad::Var, StepStats> batch_loss(
    const std::vector<TrainItem>& batch, const std::vector<PreparedItem>& prepared,
    DenoiserParameters& params, const DiffusionSchedule& schedule,
    const Skeleton& skeleton, const TrainConfig& cfg) {
  cfg.validate();
  require<BadArgument>(batch.size() == prepared.size() && !batch.empty(),
                       "batch/prepared size mismatch");
  const TokenizedPrompt null = null_prompt(params.config.text_width);

  ad::Var total;
  StepStats stats;
  stats.batch_size = static_cast<int>(batch.size());
  for (size_t i = 0; i < batch.size(); ++i) {
    const TrainItem& item = batch[i];
    const PreparedItem& prep = prepared[i];
    const bool clean_first = cfg.mode == TrainMode::reaction;

    Mat x1_t = clean_first ? item.x1
                           : q_sample(item.x1, prep.t, prep.noise1, schedule);
    Mat x2_t = q_sample(item.x2, prep.t, prep.noise2, schedule);
    const TokenizedPrompt& prompt = prep.drop_prompt ? null : item.prompt;

    DenoiseOptions opts;
    opts.frame_mask = item.frame_mask;
    auto [xh1, xh2] = denoise(ad::Var::leaf(x1_t), ad::Var::leaf(x2_t), prep.t,
                              prompt, params, opts);
    if (clean_first) xh1 = ad::Var::leaf(item.x1);

    auto [loss, terms] =
        training_loss(ad::Var::leaf(item.x1), ad::Var::leaf(item.x2), xh1, xh2,
                      skeleton, cfg.loss_weights, cfg.stats, item.frame_mask);
    total = total.defined() ? ad::add(total, loss) : loss;
    stats.terms.base += terms.base;
    stats.terms.vel += terms.vel;
    stats.terms.foot += terms.foot;
    stats.terms.bone += terms.bone;
    stats.terms.rel_orient += terms.rel_orient;
    stats.terms.ada_interact += terms.ada_interact;
  }
  total = ad::scale(total, 1.0 / static_cast<double>(batch.size()));
  const double inv = 1.0 / static_cast<double>(batch.size());
  stats.terms.base *= inv;
  stats.terms.vel *= inv;
  stats.terms.foot *= inv;
  stats.terms.bone *= inv;
  stats.terms.rel_orient *= inv;
  stats.terms.ada_interact *= inv;
  stats.terms.total = total.value()(0, 0);

  for (double v : {stats.terms.base, stats.terms.vel, stats.terms.foot,
                   stats.terms.bone, stats.terms.rel_orient,
                   stats.terms.ada_interact, stats.terms.total}) {
    require<NonFiniteLoss>(std::isfinite(v), "loss is not finite");
  }
  return {total, stats};
}

/// Draws the step randomness, populates gradients for every parameter,
/// and reports the loss breakdown. The caller applies the optimizer.
inline StepStats train_step(const std::vector<TrainItem>& batch,
                            DenoiserParameters& params,
                            const DiffusionSchedule& schedule,
                            const Skeleton& skeleton, const TrainConfig& cfg,
                            Rng& rng) {
  auto prepared = prepare_batch(batch, schedule, cfg.p_uncond, rng);
  params.store.zero_grads();
  auto [loss, stats] = batch_loss(batch, prepared, params, schedule, skeleton, cfg);
  ad::backward(loss);
  return stats;
}

}  // namespace duet
