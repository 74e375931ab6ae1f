#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

#include "duet/dataset.hpp"
#include "duet/motion.hpp"
#include "duet/skeleton.hpp"

namespace duet {

/// Adapter over an external single-person text-to-motion generator.
class SinglePersonSource {
 public:
  virtual ~SinglePersonSource() = default;
  virtual MotionSequence generate(const std::string& text, int frame_count,
                                  std::uint64_t seed) = 0;
};

/// Deterministic stand-in generator: keyword-parameterized locomotion and
/// gesture primitives on the toy skeleton.
class ProceduralMotionSource : public SinglePersonSource {
 public:
  explicit ProceduralMotionSource(Skeleton skel = toy_skeleton(), int fps = 30)
      : skel_(std::move(skel)), fps_(fps) {
    skel_.validate();
    require<BadArgument>(fps > 0, "fps must be positive");
  }

  MotionSequence generate(const std::string& text, int frame_count,
                          std::uint64_t seed) override {
    require<EmptyPrompt>(!text.empty(), "source text must be non-empty");
    require<BadArgument>(frame_count >= 2, "need at least 2 frames");

    std::string lower(text.size(), ' ');
    std::transform(text.begin(), text.end(), lower.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    auto has = [&](const char* word) {
      return lower.find(word) != std::string::npos;
    };

    const bool quick = has("quick") || has("fast") || has("brisk") ||
                       has("sharp") || has("force") || has("rapid");
    const bool slow = has("slow") || has("gentle") || has("caut");
    double speed = quick ? 1.3 : (slow ? 0.4 : 0.8);

    double advance = 0.0;  // meters/second along the facing direction
    if (has("walk") || has("approach") || has("toward") || has("forward") ||
        has("step") || has("lunge") || has("advance"))
      advance = speed;
    if (has("back") || has("retreat") || has("stumble") || has("away") ||
        has("leans back"))
      advance = -speed;
    const bool arc = has("circle") || has("orbit") || has("around");
    const bool raise = has("raise") || has("lift") || has("overhead") ||
                       has("outstretched") || has("up");
    const bool reach = has("push") || has("shove") || has("press") ||
                       has("extend") || has("reach") || has("punch") ||
                       has("wrap") || has("block");
    const bool sway = !raise && !reach && advance == 0.0 && !arc;

    Rng rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double phase0 = unit(rng) * 2 * M_PI;
    const double root_h = toy::standing_root_height(skel_);

    toy::AgentTrack track;
    track.init(frame_count, skel_.joint_count);
    const int l_sh = 6, r_sh = 9;
    for (int t = 0; t < frame_count; ++t) {
      const double sec = double(t) / fps_;
      if (arc) {
        const double ang = phase0 + (quick ? 1.2 : 0.6) * sec;
        track.root[t] = {0.9 * std::cos(ang), root_h, 0.9 * std::sin(ang)};
        track.yaw[t] = std::atan2(std::cos(ang), -std::sin(ang));
      } else {
        track.root[t] = {0.0, root_h, advance * sec};
        track.yaw[t] = 0.0;
      }
      double arm = 0.0;
      if (raise || reach)
        arm = 1.1 * toy::smoothstep(3.0 * sec * (quick ? 1.5 : 1.0));
      if (sway) arm = 0.25 * std::sin(2 * M_PI * 0.4 * sec + phase0);
      if (raise) {
        track.local[t][l_sh] = toy::rot_z(arm);
        track.local[t][r_sh] = toy::rot_z(-arm);
      } else if (reach || sway) {
        track.local[t][l_sh] = toy::rot_y(arm);
        track.local[t][r_sh] = toy::rot_y(-arm);
      }
    }
    if (advance != 0.0 || arc)
      toy::add_gait(track, skel_, quick ? 1.7 : 1.0, fps_);

    auto [positions, rot6d] = toy::run_fk(track, skel_);
    Mat contacts = toy::contacts_from_positions(positions, skel_);
    MotionSequence seq = MotionSequence::from_parts(
        to_float_grid(positions), to_float_grid(rot6d), contacts, fps_);
    validate_motion(seq);
    return seq;
  }

 private:
  Skeleton skel_;
  int fps_;
};

}  // namespace duet
