#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "duet/errors.hpp"
#include "duet/motion.hpp"
#include "duet/text.hpp"

namespace duet {

// Motion file: {magic "T2IMOT1", version: u16, fps: u16, T: u32, N: u16,
// agent_count: u8, channel_layout_id: u8, float32 payload}. Layout 1
// stores positions, non-root 6D rotations, and contacts per agent;
// velocities are recomputed on load. Values are float32 on disk, so
// sequences quantized to float round-trip bit-exactly.

inline constexpr char kMotionMagic[] = "T2IMOT1";
inline constexpr std::uint16_t kMotionVersion = 1;
inline constexpr std::uint8_t kLayoutPosRotContact = 1;

namespace detail {

inline void write_u16(std::ostream& out, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 2);
}

inline std::uint16_t read_u16(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  if (!in) throw CorruptFile("truncated u16");
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline void write_f32_matrix(std::ostream& out, const Mat& m) {
  for (long r = 0; r < m.rows(); ++r)
    for (long c = 0; c < m.cols(); ++c)
      write_f32(out, static_cast<float>(m(r, c)));
}

inline Mat read_f32_matrix(std::istream& in, long rows, long cols) {
  Mat m(rows, cols);
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c) m(r, c) = read_f32(in);
  if (!in) throw CorruptFile("truncated motion payload");
  return m;
}

inline void write_agent(std::ostream& out, const MotionSequence& m) {
  write_f32_matrix(out, m.positions);
  write_f32_matrix(out, m.rotations6d);
  write_f32_matrix(out, m.contacts);
}

inline MotionSequence read_agent(std::istream& in, int frames, int joints,
                                 int fps) {
  Mat positions = read_f32_matrix(in, frames, 3 * joints);
  Mat rotations = read_f32_matrix(in, frames, 6 * (joints - 1));
  Mat contacts = read_f32_matrix(in, frames, 4);
  return MotionSequence::from_parts(std::move(positions), std::move(rotations),
                                    std::move(contacts), fps);
}

inline void write_motion_header(std::ostream& out, int fps, int frames,
                                int joints, int agent_count) {
  out.write(kMotionMagic, 7);
  write_u16(out, kMotionVersion);
  write_u16(out, static_cast<std::uint16_t>(fps));
  write_u32(out, static_cast<std::uint32_t>(frames));
  write_u16(out, static_cast<std::uint16_t>(joints));
  out.put(static_cast<char>(agent_count));
  out.put(static_cast<char>(kLayoutPosRotContact));
}

struct MotionHeader {
  int fps, frames, joints, agent_count;
};

inline MotionHeader read_motion_header(std::istream& in) {
  char magic[7];
  in.read(magic, 7);
  if (!in || std::string(magic, 7) != kMotionMagic)
    throw CorruptFile("bad motion file magic");
  const std::uint16_t version = read_u16(in);
  require<CorruptFile>(version == kMotionVersion,
                       "unsupported motion file version " +
                           std::to_string(version));
  MotionHeader h;
  h.fps = read_u16(in);
  h.frames = static_cast<int>(read_u32(in));
  h.joints = read_u16(in);
  h.agent_count = static_cast<unsigned char>(in.get());
  const int layout = static_cast<unsigned char>(in.get());
  require<CorruptFile>(bool(in), "truncated motion header");
  require<CorruptFile>(layout == kLayoutPosRotContact,
                       "unsupported channel layout id " +
                           std::to_string(layout));
  require<CorruptFile>(h.fps > 0 && h.frames > 0 && h.joints >= 2 &&
                           (h.agent_count == 1 || h.agent_count == 2),
                       "implausible motion header");
  return h;
}

}  // namespace detail

inline void save_motion(const std::string& path, const MotionSequence& m) {
  std::ofstream out(path, std::ios::binary);
  require<IoError>(bool(out), "cannot open motion file for writing: " + path);
  detail::write_motion_header(out, m.fps, m.frames(), m.joints(), 1);
  detail::write_agent(out, m);
  require<IoError>(bool(out), "short write to motion file: " + path);
}

inline void save_motion(const std::string& path, const InteractionSample& s) {
  require<ShapeMismatch>(s.agents[0].frames() == s.agents[1].frames() &&
                             s.agents[0].joints() == s.agents[1].joints(),
                         "agents must share shape");
  std::ofstream out(path, std::ios::binary);
  require<IoError>(bool(out), "cannot open motion file for writing: " + path);
  detail::write_motion_header(out, s.agents[0].fps, s.frames(), s.joints(), 2);
  detail::write_agent(out, s.agents[0]);
  detail::write_agent(out, s.agents[1]);
  require<IoError>(bool(out), "short write to motion file: " + path);
}

inline MotionSequence load_motion(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require<IoError>(bool(in), "cannot open motion file: " + path);
  auto h = detail::read_motion_header(in);
  require<CorruptFile>(h.agent_count == 1, "expected a single-agent file");
  return detail::read_agent(in, h.frames, h.joints, h.fps);
}

/// Loads a two-agent file; captions are stored separately.
inline InteractionSample load_motion_pair(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require<IoError>(bool(in), "cannot open motion file: " + path);
  auto h = detail::read_motion_header(in);
  require<CorruptFile>(h.agent_count == 2, "expected a two-agent file");
  InteractionSample s;
  s.agents[0] = detail::read_agent(in, h.frames, h.joints, h.fps);
  s.agents[1] = detail::read_agent(in, h.frames, h.joints, h.fps);
  return s;
}

inline void save_captions(const std::string& path,
                          const std::vector<std::string>& captions) {
  require<BadArgument>(!captions.empty(), "need at least one caption");
  std::ofstream out(path);
  require<IoError>(bool(out), "cannot open caption file for writing: " + path);
  for (const auto& c : captions) {
    require<BadArgument>(!c.empty() && c.find('\n') == std::string::npos,
                         "captions must be non-empty single lines");
    out << c << "\n";
  }
}

inline std::vector<std::string> load_captions(const std::string& path) {
  std::ifstream in(path);
  require<IoError>(bool(in), "cannot open caption file: " + path);
  std::vector<std::string> captions;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' '))
      line.pop_back();
    if (!line.empty()) captions.push_back(line);
  }
  require<CorruptFile>(!captions.empty(), "caption file is empty: " + path);
  return captions;
}

/// Quantizes to float32 so the on-disk format round-trips bit-exactly.
inline Mat to_float_grid(const Mat& m) {
  return m.cast<float>().cast<double>();
}

}  // namespace duet
