#pragma once

#include <fstream>
#include <string>

#include "duet/errors.hpp"
#include "duet/rng.hpp"
#include "duet/text.hpp"

namespace duet {

// Embedding bank file: {magic "T2IBANK1", count: u32, dim: u32, row-major
// float32 little-endian count x dim}.

inline constexpr char kBankMagic[] = "T2IBANK1";

inline void write_bank(std::ostream& out, const Mat& embs) {
  require<BadArgument>(embs.rows() > 0 && embs.cols() > 0, "empty bank");
  out.write(kBankMagic, 8);
  detail::write_u32(out, static_cast<std::uint32_t>(embs.rows()));
  detail::write_u32(out, static_cast<std::uint32_t>(embs.cols()));
  for (long r = 0; r < embs.rows(); ++r)
    for (long c = 0; c < embs.cols(); ++c)
      detail::write_f32(out, static_cast<float>(embs(r, c)));
}

inline void write_bank(const std::string& path, const Mat& embs) {
  std::ofstream out(path, std::ios::binary);
  require<IoError>(bool(out), "cannot open bank for writing: " + path);
  write_bank(out, embs);
  require<IoError>(bool(out), "short write to bank: " + path);
}

inline Mat read_bank(std::istream& in) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::string(magic, 8) != kBankMagic)
    throw CorruptFile("bad bank magic");
  std::uint32_t count = detail::read_u32(in);
  std::uint32_t dim = detail::read_u32(in);
  require<CorruptFile>(count > 0 && dim > 0, "degenerate bank header");
  Mat embs(count, dim);
  for (std::uint32_t r = 0; r < count; ++r)
    for (std::uint32_t c = 0; c < dim; ++c) embs(r, c) = detail::read_f32(in);
  if (!in) throw CorruptFile("truncated bank payload");
  return embs;
}

inline Mat read_bank(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require<IoError>(bool(in), "cannot open bank: " + path);
  return read_bank(in);
}

}  // namespace duet
