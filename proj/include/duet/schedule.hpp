#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Core>

#include "duet/errors.hpp"

namespace duet {

/// Cosine noise schedule. alpha_bar holds the closed-form signal fraction
/// at every integer level 0..steps, with alpha_bar[0] == 1 exactly, so
/// level 0 is the clean signal. betas are the per-step noise rates
/// implied by consecutive alpha_bar ratios, clipped at 0.999; the
/// identity alpha_bar[t+1] == alpha_bar[t] * (1 - betas[t]) holds
/// wherever the clip is inactive.
struct DiffusionSchedule {
  int steps = 0;
  double shift = 0.008;
  std::vector<double> alpha_bar;  // steps + 1 entries
  std::vector<double> betas;      // steps entries

  static DiffusionSchedule cosine(int steps = 1000, double shift = 0.008) {
    require<BadArgument>(steps >= 2, "schedule needs at least 2 steps");
    require<BadArgument>(shift > 0.0, "shift must be positive");
    DiffusionSchedule sch;
    sch.steps = steps;
    sch.shift = shift;
    auto f = [&](double t) {
      double u = ((t / steps + shift) / (1.0 + shift)) * (M_PI / 2.0);
      double c = std::cos(u);
      return c * c;
    };
    const double f0 = f(0.0);
    sch.alpha_bar.resize(steps + 1);
    for (int t = 0; t <= steps; ++t) sch.alpha_bar[t] = f(double(t)) / f0;
    sch.alpha_bar[0] = 1.0;
    sch.betas.resize(steps);
    for (int t = 0; t < steps; ++t)
      sch.betas[t] =
          std::min(1.0 - sch.alpha_bar[t + 1] / sch.alpha_bar[t], 0.999);
    return sch;
  }

  double sqrt_alpha_bar(int t) const {
    require<OutOfRange>(t >= 0 && t <= steps, "level out of range");
    return std::sqrt(alpha_bar[t]);
  }
  double sqrt_one_minus_alpha_bar(int t) const {
    require<OutOfRange>(t >= 0 && t <= steps, "level out of range");
    return std::sqrt(1.0 - alpha_bar[t]);
  }
};

/// Diffuses a clean signal to noise level t. Level 0 returns x0 verbatim.
inline Eigen::MatrixXd q_sample(const Eigen::MatrixXd& x0, int t,
                                const Eigen::MatrixXd& noise,
                                const DiffusionSchedule& schedule) {
  require<ShapeMismatch>(noise.rows() == x0.rows() && noise.cols() == x0.cols(),
                         "noise shape must match signal");
  if (t == 0) return x0;
  return schedule.sqrt_alpha_bar(t) * x0 +
         schedule.sqrt_one_minus_alpha_bar(t) * noise;
}

/// Denoising level subsequence: ddim_steps values rounded from an even
/// grid over [0, steps-1], returned in descending order, ending at 0.
inline std::vector<int> ddim_timesteps(int steps, int ddim_steps) {
  require<BadArgument>(ddim_steps >= 2, "need at least 2 denoising steps");
  require<BadArgument>(ddim_steps <= steps, "cannot exceed training steps");
  std::vector<int> taus(ddim_steps);
  for (int i = 0; i < ddim_steps; ++i) {
    double v = double(i) * double(steps - 1) / double(ddim_steps - 1);
    taus[ddim_steps - 1 - i] = static_cast<int>(std::llround(v));
  }
  return taus;
}

}  // namespace duet
