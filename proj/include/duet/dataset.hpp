#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Geometry>

#include "json.hpp"

#include "duet/errors.hpp"
#include "duet/motion.hpp"
#include "duet/motion_io.hpp"
#include "duet/normalize.hpp"
#include "duet/rng.hpp"
#include "duet/skeleton.hpp"

namespace duet {

// -- manifest -----------------------------------------------------------------

struct ManifestEntry {
  std::string motion_path;   // relative to the manifest directory
  std::string caption_path;  // one caption per line
  std::string split;         // train | test | heldout
  std::string provenance = "real";
};

/// Index of a dataset on disk plus the train-split normalization stats.
struct DatasetManifest {
  int fps = 30;
  int joint_count = 22;
  std::vector<ManifestEntry> entries;
  ChannelStats stats;
  std::string root;  // set when loaded; not serialized

  void validate() const {
    require<BadArgument>(fps > 0 && joint_count >= 2, "bad manifest header");
    std::vector<std::string> seen;
    for (const auto& e : entries) {
      require<BadArgument>(e.split == "train" || e.split == "test" ||
                               e.split == "heldout",
                           "unknown split: " + e.split);
      require<BadArgument>(e.provenance == "real" ||
                               e.provenance == "synthetic_raw" ||
                               e.provenance == "synthetic_filtered",
                           "unknown provenance: " + e.provenance);
      for (const auto& s : seen)
        require<BadArgument>(s != e.motion_path,
                             "sample in two splits: " + e.motion_path);
      seen.push_back(e.motion_path);
    }
    if (stats.mean.size() > 0) {
      require<ShapeMismatch>(stats.width() == channels_per_frame(joint_count),
                             "stats width mismatch");
      stats.validate();
    }
  }

  std::vector<ManifestEntry> entries_for(const std::string& split) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries)
      if (e.split == split) out.push_back(e);
    return out;
  }

  std::string resolve(const std::string& rel) const {
    return root.empty() ? rel : root + "/" + rel;
  }
};

inline void save_manifest(const std::string& path, const DatasetManifest& m) {
  m.validate();
  nlohmann::json j;
  j["fps"] = m.fps;
  j["joint_count"] = m.joint_count;
  j["entries"] = nlohmann::json::array();
  for (const auto& e : m.entries)
    j["entries"].push_back({{"motion", e.motion_path},
                            {"captions", e.caption_path},
                            {"split", e.split},
                            {"provenance", e.provenance}});
  if (m.stats.mean.size() > 0) {
    j["stats"]["mean"] = std::vector<double>(
        m.stats.mean.data(), m.stats.mean.data() + m.stats.mean.size());
    j["stats"]["std"] = std::vector<double>(
        m.stats.std.data(), m.stats.std.data() + m.stats.std.size());
  }
  std::ofstream out(path);
  require<IoError>(bool(out), "cannot write manifest: " + path);
  out << j.dump(2) << "\n";
}

inline DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  require<IoError>(bool(in), "cannot open manifest: " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  require<CorruptFile>(!j.is_discarded(), "manifest is not JSON: " + path);

  DatasetManifest m;
  try {
    m.fps = j.at("fps").get<int>();
    m.joint_count = j.at("joint_count").get<int>();
    for (const auto& e : j.at("entries")) {
      ManifestEntry entry;
      entry.motion_path = e.at("motion").get<std::string>();
      entry.caption_path = e.at("captions").get<std::string>();
      entry.split = e.at("split").get<std::string>();
      entry.provenance = e.value("provenance", "real");
      m.entries.push_back(std::move(entry));
    }
    if (j.contains("stats")) {
      auto mean = j["stats"].at("mean").get<std::vector<double>>();
      auto dev = j["stats"].at("std").get<std::vector<double>>();
      require<CorruptFile>(mean.size() == dev.size(), "stats length mismatch");
      m.stats.mean = Eigen::Map<Eigen::RowVectorXd>(mean.data(), mean.size());
      m.stats.std = Eigen::Map<Eigen::RowVectorXd>(dev.data(), dev.size());
    }
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFile(std::string("malformed manifest: ") + e.what());
  }
  m.root = std::filesystem::path(path).parent_path().string();
  m.validate();
  return m;
}

inline Provenance provenance_from_string(const std::string& s) {
  if (s == "real") return Provenance::real;
  if (s == "synthetic_raw") return Provenance::synthetic_raw;
  if (s == "synthetic_filtered") return Provenance::synthetic_filtered;
  throw BadArgument("unknown provenance: " + s);
}

inline InteractionSample load_entry(const DatasetManifest& m,
                                    const ManifestEntry& e) {
  InteractionSample s = load_motion_pair(m.resolve(e.motion_path));
  s.captions = load_captions(m.resolve(e.caption_path));
  s.provenance = provenance_from_string(e.provenance);
  require<ShapeMismatch>(s.joints() == m.joint_count,
                         "entry joint count differs from manifest");
  return s;
}

inline std::vector<InteractionSample> load_split(const DatasetManifest& m,
                                                 const std::string& split) {
  std::vector<InteractionSample> out;
  for (const auto& e : m.entries_for(split)) out.push_back(load_entry(m, e));
  return out;
}

// -- procedural toy data ------------------------------------------------------

/// Grammar and scale knobs for the generated corpus.
struct ToyDataConfig {
  int fps = 30;
  int min_frames = 48;
  int max_frames = 96;  // hard cap 128
  double position_jitter = 0.08;

  void validate() const {
    require<BadArgument>(fps > 0, "fps must be positive");
    require<BadArgument>(8 <= min_frames && min_frames <= max_frames &&
                             max_frames <= 128,
                         "frame range must satisfy 8 <= min <= max <= 128");
    require<BadArgument>(position_jitter >= 0, "jitter must be nonnegative");
  }
};

namespace toy {

using Eigen::Matrix3d;
using Eigen::Vector3d;

inline Matrix3d rot_x(double a) {
  return Eigen::AngleAxisd(a, Vector3d::UnitX()).toRotationMatrix();
}
inline Matrix3d rot_y(double a) {
  return Eigen::AngleAxisd(a, Vector3d::UnitY()).toRotationMatrix();
}
inline Matrix3d rot_z(double a) {
  return Eigen::AngleAxisd(a, Vector3d::UnitZ()).toRotationMatrix();
}

/// Frame-by-frame description of one agent: a root path plus local joint
/// rotations (identity unless a primitive animates them).
struct AgentTrack {
  std::vector<Vector3d> root;          // T world root positions
  std::vector<double> yaw;             // T root headings about +Y
  std::vector<std::vector<Matrix3d>> local;  // T x J local rotations

  void init(int frames, int joints) {
    root.assign(frames, Vector3d::Zero());
    yaw.assign(frames, 0.0);
    local.assign(frames, std::vector<Matrix3d>(joints, Matrix3d::Identity()));
  }
};

/// Root height that rests the heels on the ground plane.
inline double standing_root_height(const Skeleton& skel) {
  std::vector<Vector3d> rest(skel.joint_count);
  rest[0] = Vector3d::Zero();
  for (int j = 1; j < skel.joint_count; ++j)
    rest[j] = rest[skel.parent_index[j]] + skel.offsets.row(j).transpose();
  double low = 0.0;
  for (int f : skel.foot_joint_ids) low = std::min(low, rest[f].y());
  return -low;
}

/// Forward kinematics over the track; returns world positions (T x 3J)
/// and the non-root local rotations in the 6D encoding (T x 6(J-1)).
inline std::pair<Mat, Mat> run_fk(const AgentTrack& track,
                                  const Skeleton& skel) {
  const int T = static_cast<int>(track.root.size());
  const int J = skel.joint_count;
  Mat positions(T, 3 * J);
  Mat rot6d(T, 6 * (J - 1));
  std::vector<Vector3d> pos(J);
  std::vector<Matrix3d> orient(J);
  for (int t = 0; t < T; ++t) {
    pos[0] = track.root[t];
    orient[0] = rot_y(track.yaw[t]);
    for (int j = 1; j < J; ++j) {
      const int p = skel.parent_index[j];
      pos[j] = pos[p] + orient[p] * skel.offsets.row(j).transpose();
      orient[j] = orient[p] * track.local[t][j];
    }
    for (int j = 0; j < J; ++j)
      positions.row(t).segment<3>(3 * j) = pos[j].transpose();
    for (int j = 1; j < J; ++j) {
      const Matrix3d& r = track.local[t][j];
      rot6d.row(t).segment<3>(6 * (j - 1)) = r.col(0).transpose();
      rot6d.row(t).segment<3>(6 * (j - 1) + 3) = r.col(1).transpose();
    }
  }
  return {positions, rot6d};
}

/// Heel/toe height rule: a foot joint below the threshold is planted.
inline Mat contacts_from_positions(const Mat& positions, const Skeleton& skel,
                                   double height_threshold = 0.05) {
  const int T = static_cast<int>(positions.rows());
  Mat contacts = Mat::Zero(T, 4);
  for (int t = 0; t < T; ++t)
    for (int k = 0; k < 4; ++k) {
      const int j = skel.foot_joint_ids[k];
      contacts(t, k) = positions(t, 3 * j + 1) < height_threshold ? 1.0 : 0.0;
    }
  return contacts;
}

/// Sinusoidal leg swing while the root is moving.
inline void add_gait(AgentTrack& track, const Skeleton& skel, double step_hz,
                     int fps) {
  const int T = static_cast<int>(track.root.size());
  const int l_hip = 12, r_hip = 17, l_knee = 13, r_knee = 18;
  (void)skel;
  for (int t = 1; t < T; ++t) {
    const double speed = (track.root[t] - track.root[t - 1]).norm() * fps;
    if (speed < 0.05) continue;
    const double phase = 2.0 * M_PI * step_hz * t / fps;
    const double swing = 0.5 * std::sin(phase);
    track.local[t][l_hip] = rot_x(swing);
    track.local[t][r_hip] = rot_x(-swing);
    track.local[t][l_knee] = rot_x(std::max(0.0, 0.6 * std::sin(phase + 0.5)));
    track.local[t][r_knee] = rot_x(std::max(0.0, -0.6 * std::sin(phase + 0.5)));
  }
}

/// Smooth 0 -> 1 ramp.
inline double smoothstep(double x) {
  x = std::min(1.0, std::max(0.0, x));
  return x * x * (3.0 - 2.0 * x);
}

struct ToySample {
  InteractionSample sample;
  int kind = 0;
};

/// Kinds: 0 approach, 1 circle, 2 mirrored gestures, 3 push-retreat.
/// Caption wording tracks the motion parameters so text-motion retrieval
/// on this corpus is learnable.
inline ToySample make_toy_sample(int kind, Rng& rng, const Skeleton& skel,
                                 const ToyDataConfig& cfg) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto coin = [&] { return unit(rng) < 0.5; };
  auto jitter = [&](double scale) { return (unit(rng) * 2 - 1) * scale; };

  const double root_h = standing_root_height(skel);
  const int J = skel.joint_count;
  AgentTrack a, b;
  std::string caption;
  int frames = 0;

  if (kind == 0) {  // approach
    const bool slow = coin(), far = coin();
    const double d0 = (far ? 2.8 : 1.7) + jitter(0.1);
    const double gap = 0.45 + jitter(0.04);
    frames = cfg.min_frames + (slow ? 24 : 0) + (far ? 16 : 0);
    a.init(frames, J);
    b.init(frames, J);
    for (int t = 0; t < frames; ++t) {
      const double p = smoothstep(double(t) / (0.85 * frames));
      const double travel = p * (d0 - gap) / 2;
      a.root[t] = {jitter(0.0), root_h, -d0 / 2 + travel};
      b.root[t] = {0.0, root_h, d0 / 2 - travel};
      a.yaw[t] = 0.0;   // facing +Z
      b.yaw[t] = M_PI;  // facing -Z
    }
    add_gait(a, skel, slow ? 1.0 : 1.8, cfg.fps);
    add_gait(b, skel, slow ? 1.0 : 1.8, cfg.fps);
    caption = std::string("two people walk toward each other ") +
              (slow ? "slowly" : "briskly") + " across " +
              (far ? "a wide gap" : "a short gap") + " and stop face to face";
  } else if (kind == 1) {  // circle
    const bool clockwise = coin(), wide = coin(), quick = coin();
    const double radius = (wide ? 1.5 : 0.9) + jitter(0.08);
    const double omega = (quick ? 1.3 : 0.6) * (clockwise ? -1.0 : 1.0);
    frames = cfg.min_frames + (quick ? 0 : 16);
    a.init(frames, J);
    b.init(frames, J);
    const double base = unit(rng) * 2 * M_PI;
    for (int t = 0; t < frames; ++t) {
      const double ang = base + omega * t / cfg.fps;
      a.root[t] = {radius * std::cos(ang), root_h, radius * std::sin(ang)};
      b.root[t] = {-radius * std::cos(ang), root_h, -radius * std::sin(ang)};
      // Face along the direction of travel.
      a.yaw[t] = std::atan2(std::cos(ang), -std::sin(ang)) +
                 (clockwise ? M_PI : 0.0);
      b.yaw[t] = a.yaw[t] + M_PI;
    }
    add_gait(a, skel, quick ? 1.6 : 1.0, cfg.fps);
    add_gait(b, skel, quick ? 1.6 : 1.0, cfg.fps);
    caption = std::string("the pair circles ") +
              (clockwise ? "clockwise" : "counterclockwise") + " in " +
              (wide ? "a wide ring" : "a tight ring") + " at " +
              (quick ? "a quick pace" : "a gentle pace");
  } else if (kind == 2) {  // mirrored gestures
    const bool raise = coin(), rapid = coin();
    const double tempo = rapid ? 1.1 : 0.45;
    const double amp = 1.1 + jitter(0.1);
    frames = cfg.min_frames + (rapid ? 0 : 12);
    a.init(frames, J);
    b.init(frames, J);
    const int l_sh = 6, r_sh = 9;
    for (int t = 0; t < frames; ++t) {
      const double sep = 0.95 + jitter(0.0);
      a.root[t] = {0.0, root_h, -sep};
      b.root[t] = {0.0, root_h, sep};
      a.yaw[t] = 0.0;
      b.yaw[t] = M_PI;
      const double ang =
          amp * 0.5 * (1 - std::cos(2 * M_PI * tempo * t / cfg.fps));
      for (AgentTrack* tr : {&a, &b}) {
        if (raise) {  // arms rotate up toward overhead
          tr->local[t][l_sh] = rot_z(ang);
          tr->local[t][r_sh] = rot_z(-ang);
        } else {  // arms sweep forward and back
          tr->local[t][l_sh] = rot_y(ang);
          tr->local[t][r_sh] = rot_y(-ang);
        }
      }
    }
    caption = std::string("facing each other the two ") +
              (raise ? "raise their arms overhead" : "sweep their arms forward") +
              " in " + (rapid ? "rapid" : "slow") + " mirrored rhythm";
  } else {  // push-retreat
    const bool forceful = coin(), paces = coin();
    const double retreat = (paces ? 1.3 : 0.45) + jitter(0.05);
    const double push_speed = forceful ? 1.6 : 0.7;
    frames = cfg.min_frames + (paces ? 16 : 0);
    a.init(frames, J);
    b.init(frames, J);
    const int l_sh = 6, r_sh = 9;
    const int contact_frame = frames / 3;
    for (int t = 0; t < frames; ++t) {
      const double lunge =
          0.25 * smoothstep(double(t - contact_frame + 8) / 10.0);
      a.root[t] = {0.0, root_h, -0.75 + lunge};
      const double after = std::max(0.0, double(t - contact_frame));
      const double back =
          std::min(retreat, push_speed * after / cfg.fps);
      b.root[t] = {0.0, root_h, 0.75 + back};
      a.yaw[t] = 0.0;
      b.yaw[t] = M_PI;
      // The pusher extends both arms forward around the contact moment.
      const double reach =
          1.2 * smoothstep(double(t - contact_frame + 10) / 12.0);
      a.local[t][l_sh] = rot_y(reach);
      a.local[t][r_sh] = rot_y(-reach);
    }
    add_gait(b, skel, forceful ? 1.8 : 1.2, cfg.fps);
    caption = std::string("one person ") +
              (forceful ? "forcefully shoves" : "gently pushes") +
              " the other, who stumbles back " +
              (paces ? "several paces" : "a single step");
  }

  ToySample out;
  out.kind = kind;
  for (AgentTrack* tr : {&a, &b}) {
    // Small whole-body jitter decorrelates same-caption instances.
    const Vector3d shift(jitter(cfg.position_jitter), 0.0,
                         jitter(cfg.position_jitter));
    for (auto& r : tr->root) r += shift;
    auto [positions, rot6d] = run_fk(*tr, skel);
    Mat contacts = contacts_from_positions(positions, skel);
    MotionSequence seq = MotionSequence::from_parts(
        to_float_grid(positions), to_float_grid(rot6d), contacts, cfg.fps);
    out.sample.agents[tr == &a ? 0 : 1] = std::move(seq);
  }
  out.sample.captions = {caption};
  out.sample.provenance = Provenance::real;
  validate_sample(out.sample);
  return out;
}

}  // namespace toy

/// Writes a procedurally generated corpus under out_dir and returns its
/// manifest (also saved as out_dir/manifest.json). Entry i goes to the
/// heldout split when i % 8 == 7, test when i % 8 == 6, train otherwise.
inline DatasetManifest generate_toy_dataset(const std::string& out_dir,
                                            int n_samples, std::uint64_t seed,
                                            const ToyDataConfig& cfg = {}) {
  require<BadArgument>(n_samples >= 8, "need at least 8 samples");
  cfg.validate();
  const Skeleton skel = toy_skeleton();

  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "motions");
  fs::create_directories(fs::path(out_dir) / "captions");

  DatasetManifest manifest;
  manifest.fps = cfg.fps;
  manifest.joint_count = skel.joint_count;
  manifest.root = out_dir;

  std::vector<Mat> train_frames;
  for (int i = 0; i < n_samples; ++i) {
    Rng rng(seed * 0x9e3779b97f4a7c15ULL + std::uint64_t(i) + 1);
    toy::ToySample toy_sample = toy::make_toy_sample(i % 4, rng, skel, cfg);

    char name[32];
    std::snprintf(name, sizeof name, "sample_%04d", i);
    ManifestEntry entry;
    entry.motion_path = std::string("motions/") + name + ".t2imot";
    entry.caption_path = std::string("captions/") + name + ".txt";
    entry.split = i % 8 == 7 ? "heldout" : (i % 8 == 6 ? "test" : "train");
    save_motion(manifest.resolve(entry.motion_path), toy_sample.sample);
    save_captions(manifest.resolve(entry.caption_path),
                  toy_sample.sample.captions);

    if (entry.split == "train") {
      train_frames.push_back(build_representation(toy_sample.sample.agents[0]));
      train_frames.push_back(build_representation(toy_sample.sample.agents[1]));
    }
    manifest.entries.push_back(std::move(entry));
  }

  manifest.stats = ChannelStats::compute(train_frames);
  save_manifest((fs::path(out_dir) / "manifest.json").string(), manifest);
  return manifest;
}

}  // namespace duet
