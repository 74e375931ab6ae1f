#pragma once

#include <cmath>
#include <vector>

#include "duet/errors.hpp"
#include "duet/text.hpp"

namespace duet {

/// Predicts a frame count from a prompt's word count with a closed-form
/// least-squares line, clamped to the configured range.
struct LengthEstimator {
  double intercept = 0.0;
  double slope = 0.0;
  int min_frames = 16;
  int max_frames = 128;
  bool trained = false;

  int predict_from_words(int word_count) const {
    require<NotTrained>(trained, "length estimator has not been fitted");
    double raw = intercept + slope * word_count;
    int frames = static_cast<int>(std::llround(raw));
    return std::min(max_frames, std::max(min_frames, frames));
  }

  int predict(const TokenizedPrompt& prompt) const {
    // Boundary markers carry no length information.
    return predict_from_words(prompt.valid_count() - 2);
  }
};

/// Ordinary least squares of frame count on word count.
inline LengthEstimator fit_length_estimator(
    const std::vector<std::pair<int, int>>& word_count_to_frames,
    int min_frames = 16, int max_frames = 128) {
  require<DatasetTooSmall>(word_count_to_frames.size() >= 2,
                           "need at least 2 pairs to fit");
  require<BadArgument>(0 < min_frames && min_frames <= max_frames,
                       "bad frame clamp range");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = double(word_count_to_frames.size());
  for (auto [w, f] : word_count_to_frames) {
    require<BadArgument>(w >= 0 && f > 0, "bad training pair");
    sx += w;
    sy += f;
    sxx += double(w) * w;
    sxy += double(w) * f;
  }
  LengthEstimator est;
  est.min_frames = min_frames;
  est.max_frames = max_frames;
  const double denom = n * sxx - sx * sx;
  if (std::abs(denom) < 1e-12) {
    est.slope = 0.0;  // all word counts equal: fall back to the mean
    est.intercept = sy / n;
  } else {
    est.slope = (n * sxy - sx * sy) / denom;
    est.intercept = (sy - est.slope * sx) / n;
  }
  est.trained = true;
  return est;
}

}  // namespace duet
