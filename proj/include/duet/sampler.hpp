#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>

#include "duet/denoiser.hpp"
#include "duet/losses.hpp"
#include "duet/motion.hpp"
#include "duet/normalize.hpp"
#include "duet/schedule.hpp"
#include "duet/text.hpp"

namespace duet {

struct SamplerConfig {
  int ddim_steps = 50;
  double guidance_weight = 3.5;
  double eta = 0.0;      // 0 = deterministic update
  double clamp_x0 = 6.0;  // |x̂0| bound in model units; 0 disables
  uint64_t seed = 0;

  void validate() const {
    require<BadArgument>(ddim_steps >= 2, "need at least 2 denoising steps");
    require<BadArgument>(std::isfinite(guidance_weight), "guidance weight");
    require<BadArgument>(std::isfinite(eta) && eta >= 0.0,
                         "eta must be nonnegative");
    require<BadArgument>(std::isfinite(clamp_x0) && clamp_x0 >= 0.0,
                         "clamp must be nonnegative");
  }
};

/// Guided prediction: uncond + w * (cond - uncond). w == 1 short-circuits
/// to the conditional prediction verbatim.
inline Mat cfg_combine(const Mat& cond_pred, const Mat& uncond_pred, double w) {
  require<ShapeMismatch>(cond_pred.rows() == uncond_pred.rows() &&
                             cond_pred.cols() == uncond_pred.cols(),
                         "guidance shape mismatch");
  if (w == 1.0) return cond_pred;
  return uncond_pred + w * (cond_pred - uncond_pred);
}

/// Clean-signal predictor for both agents at level t; `conditional`
/// selects the text-conditioned or null-prompt pass.
using GuidedPredictor =
    std::function<std::pair<Mat, Mat>(const Mat& x1, const Mat& x2, int t,
                                      bool conditional)>;

/// Called whenever the joint state reaches a new noise level: right after
/// initialization and after every update. `level` is the schedule level
/// the state now sits at; -1 means fully denoised.
using StepHook = std::function<void(Mat& x1, Mat& x2, int level, Rng& rng)>;

/// Deterministic-at-eta-0 denoising loop over a strided level subsequence.
/// Predictions parameterize the clean signal; the implied noise drives the
/// update. Returns the pair of flat representations in model space.
inline std::pair<Mat, Mat> ddim_core(const GuidedPredictor& predict, long frames,
                                     long width, const SamplerConfig& cfg,
                                     const DiffusionSchedule& schedule,
                                     const StepHook& hook = {}) {
  cfg.validate();
  Rng rng(cfg.seed);
  Mat x1 = random_normal(rng, frames, width);
  Mat x2 = random_normal(rng, frames, width);
  const std::vector<int> taus = ddim_timesteps(schedule.steps, cfg.ddim_steps);
  if (hook) hook(x1, x2, taus[0], rng);

  for (size_t i = 0; i < taus.size(); ++i) {
    const int t = taus[i];
    const bool last = i + 1 == taus.size();
    const double ab_t = schedule.alpha_bar[t];
    const double ab_next = last ? 1.0 : schedule.alpha_bar[taus[i + 1]];

    Mat p1, p2;
    if (cfg.guidance_weight == 1.0) {
      std::tie(p1, p2) = predict(x1, x2, t, true);
    } else if (cfg.guidance_weight == 0.0) {
      std::tie(p1, p2) = predict(x1, x2, t, false);
    } else {
      auto [c1, c2] = predict(x1, x2, t, true);
      auto [u1, u2] = predict(x1, x2, t, false);
      p1 = cfg_combine(c1, u1, cfg.guidance_weight);
      p2 = cfg_combine(c2, u2, cfg.guidance_weight);
    }
    if (cfg.clamp_x0 > 0.0) {
      p1 = p1.cwiseMax(-cfg.clamp_x0).cwiseMin(cfg.clamp_x0);
      p2 = p2.cwiseMax(-cfg.clamp_x0).cwiseMin(cfg.clamp_x0);
    }

    if (ab_next == 1.0) {
      x1 = p1;
      x2 = p2;
    } else {
      const double sqrt_ab = std::sqrt(ab_t);
      const double sqrt_1m = std::sqrt(1.0 - ab_t);
      const double sigma =
          cfg.eta * std::sqrt((1.0 - ab_next) / (1.0 - ab_t)) *
          std::sqrt(1.0 - ab_t / ab_next);
      const double dir =
          std::sqrt(std::max(0.0, 1.0 - ab_next - sigma * sigma));
      auto update = [&](Mat& x, const Mat& p) {
        Mat eps = (x - sqrt_ab * p) / sqrt_1m;
        x = std::sqrt(ab_next) * p + dir * eps;
        if (sigma > 0.0) x += sigma * random_normal(rng, x.rows(), x.cols());
      };
      update(x1, p1);
      update(x2, p2);
    }
    if (hook) hook(x1, x2, last ? -1 : taus[i + 1], rng);
  }
  return {x1, x2};
}

/// Samples both agents' flat representations (model space) for a prompt.
inline std::pair<Mat, Mat> ddim_sample_flat(DenoiserParameters& params,
                                            const TokenizedPrompt& prompt,
                                            int frames, const SamplerConfig& cfg,
                                            const DiffusionSchedule& schedule,
                                            const DenoiseOptions& opts = {}) {
  require<BadArgument>(frames > 0 && frames <= params.config.max_frames,
                       "frame count out of range");
  const TokenizedPrompt null = null_prompt(params.config.text_width);
  GuidedPredictor fn = [&](const Mat& a, const Mat& b, int t, bool conditional) {
    return denoise(a, b, t, conditional ? prompt : null, params, opts);
  };
  return ddim_core(fn, frames, params.config.channel_width, cfg, schedule);
}

/// Full text-to-interaction sampling: denoise in model space, undo
/// normalization, and package both agents.
inline InteractionSample ddim_sample(DenoiserParameters& params,
                                     const TokenizedPrompt& prompt,
                                     const std::string& caption, int frames,
                                     const SamplerConfig& cfg,
                                     const DiffusionSchedule& schedule,
                                     const ChannelStats& stats, int fps = 30) {
  auto [f1, f2] = ddim_sample_flat(params, prompt, frames, cfg, schedule);
  const int N = joints_from_width(params.config.channel_width);
  InteractionSample s;
  s.agents[0] = motion_from_flat(denormalize_rows(f1, stats), N, fps);
  s.agents[1] = motion_from_flat(denormalize_rows(f2, stats), N, fps);
  s.captions = {caption};
  s.provenance = Provenance::synthetic_raw;
  return s;
}

/// Samples agent 2 reacting to a fixed agent-1 joint trajectory. At every
/// level the agent-1 position channels are replaced by the condition
/// noised to that level (velocities recomputed); the returned sample
/// carries the clean condition verbatim.
inline InteractionSample reaction_sample(DenoiserParameters& params,
                                         const Mat& condition_positions,
                                         const TokenizedPrompt& prompt,
                                         const std::string& caption,
                                         const SamplerConfig& cfg,
                                         const DiffusionSchedule& schedule,
                                         const ChannelStats& stats,
                                         int fps = 30) {
  const int C = params.config.channel_width;
  const int N = joints_from_width(C);
  const long T = condition_positions.rows();
  require<ShapeMismatch>(condition_positions.cols() == 3 * N,
                         "condition must be T x 3N positions");
  require<BadArgument>(T > 0 && T <= params.config.max_frames,
                       "frame count out of range");
  require<BadArgument>(condition_positions.allFinite(),
                       "condition must be finite");
  stats.validate();
  require<ShapeMismatch>(stats.width() == C, "stats width mismatch");

  Mat centered =
      condition_positions.rowwise() - stats.mean.row(0).head(3 * N);
  Mat cond_norm =
      (centered.array().rowwise() / stats.std.row(0).head(3 * N).array())
          .matrix();

  StepHook impose = [&](Mat& x1, Mat&, int level, Rng& rng) {
    Mat pos = level > 0
                  ? q_sample(cond_norm, level,
                             random_normal(rng, T, 3 * N), schedule)
                  : cond_norm;
    x1.leftCols(3 * N) = pos;
    x1.middleCols(3 * N, 3 * N).setZero();
    for (long t = 1; t < T; ++t)
      x1.row(t).segment(3 * N, 3 * N) = pos.row(t) - pos.row(t - 1);
  };

  const TokenizedPrompt null = null_prompt(params.config.text_width);
  GuidedPredictor fn = [&](const Mat& a, const Mat& b, int t, bool conditional) {
    return denoise(a, b, t, conditional ? prompt : null, params);
  };
  auto [f1, f2] = ddim_core(fn, T, C, cfg, schedule, impose);

  Mat m1 = denormalize_rows(f1, stats);
  Mat m2 = denormalize_rows(f2, stats);
  m1.leftCols(3 * N) = condition_positions;  // exact, not round-tripped

  InteractionSample s;
  s.agents[0] = motion_from_flat(m1, N, fps);
  s.agents[1] = motion_from_flat(m2, N, fps);
  s.captions = {caption};
  s.provenance = Provenance::synthetic_raw;
  return s;
}

}  // namespace duet
