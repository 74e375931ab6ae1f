#pragma once

#include <cctype>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "duet/errors.hpp"
#include "duet/rng.hpp"

namespace duet {

/// A prompt after tokenization: ids for the valid positions, an
/// L_max x D embedding matrix (zero rows where mask is off), and the
/// validity mask. Position 0 is the start marker; the last valid
/// position is the end marker.
struct TokenizedPrompt {
  static constexpr int kMaxTokens = 77;   // 75 words + 2 boundary markers
  static constexpr int kWordBudget = 75;
  static constexpr std::uint32_t kPadId = 0;
  static constexpr std::uint32_t kStartId = 1;
  static constexpr std::uint32_t kEndId = 2;
  static constexpr std::uint32_t kFirstWordId = 3;

  std::vector<std::uint32_t> token_ids;  // length = valid count
  Eigen::MatrixXd embeddings;            // kMaxTokens x D once embedded
  std::vector<std::uint8_t> mask;        // kMaxTokens entries

  int valid_count() const { return static_cast<int>(token_ids.size()); }
  int dim() const { return static_cast<int>(embeddings.cols()); }
  bool embedded() const { return embeddings.size() > 0; }
};

inline void validate_prompt(const TokenizedPrompt& p) {
  const int L = p.valid_count();
  require<BadArgument>(L >= 2 && L <= TokenizedPrompt::kMaxTokens,
                       "prompt token count out of range");
  require<BadArgument>(p.token_ids.front() == TokenizedPrompt::kStartId,
                       "first token must be the start marker");
  require<BadArgument>(p.token_ids.back() == TokenizedPrompt::kEndId,
                       "last valid token must be the end marker");
  require<BadArgument>(
      static_cast<int>(p.mask.size()) == TokenizedPrompt::kMaxTokens,
      "mask must cover the padded length");
  for (int k = 0; k < TokenizedPrompt::kMaxTokens; ++k)
    require<BadArgument>((p.mask[k] != 0) == (k < L),
                         "mask must flag exactly the leading valid positions");
  if (p.embedded()) {
    require<ShapeMismatch>(p.embeddings.rows() == TokenizedPrompt::kMaxTokens,
                           "embeddings must be padded to kMaxTokens rows");
    for (int k = L; k < TokenizedPrompt::kMaxTokens; ++k)
      require<BadArgument>(p.embeddings.row(k).isZero(0.0),
                           "masked-off embedding rows must be zero");
  }
}

namespace detail {
inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}
}  // namespace detail

/// Lowercases, splits on non-alphanumeric characters, hashes each word
/// into [kFirstWordId, kFirstWordId + vocab_size), and brackets the ids
/// with start/end markers. Words beyond the budget are discarded.
inline TokenizedPrompt tokenize(const std::string& text,
                                std::uint32_t vocab_size = 8192) {
  require<BadArgument>(vocab_size > 0, "vocab_size must be positive");
  TokenizedPrompt p;
  p.token_ids.push_back(TokenizedPrompt::kStartId);
  std::string word;
  int words = 0;
  auto flush = [&] {
    if (!word.empty() && words < TokenizedPrompt::kWordBudget) {
      p.token_ids.push_back(TokenizedPrompt::kFirstWordId +
                            static_cast<std::uint32_t>(detail::fnv1a64(word) %
                                                       vocab_size));
      ++words;
    }
    word.clear();
  };
  for (unsigned char c : text) {
    if (std::isalnum(c))
      word.push_back(static_cast<char>(std::tolower(c)));
    else
      flush();
  }
  flush();
  if (words == 0) throw EmptyPrompt("prompt has no tokens");
  p.token_ids.push_back(TokenizedPrompt::kEndId);
  p.mask.assign(TokenizedPrompt::kMaxTokens, 0);
  for (int k = 0; k < p.valid_count(); ++k) p.mask[k] = 1;
  return p;
}

/// Provider of per-token word embeddings.
class WordEmbedder {
 public:
  virtual ~WordEmbedder() = default;
  virtual int dim() const = 0;
  virtual Eigen::RowVectorXd embed(std::uint32_t token_id) const = 0;
};

/// Deterministic stand-in for a pretrained encoder: each token id maps to
/// a fixed pseudo-random unit vector.
class StubWordEmbedder : public WordEmbedder {
 public:
  explicit StubWordEmbedder(int dim = 256) : dim_(dim) {
    require<BadArgument>(dim >= 2, "embedding dim too small");
  }
  int dim() const override { return dim_; }
  Eigen::RowVectorXd embed(std::uint32_t token_id) const override {
    Rng rng(0x9e3779b97f4a7c15ULL ^ (std::uint64_t(token_id) * 0xbf58476d1ce4e5b9ULL));
    Eigen::RowVectorXd v = random_normal(rng, 1, dim_);
    double n = v.norm();
    while (n < 1e-9) {  // vanishing draws are astronomically unlikely
      v = random_normal(rng, 1, dim_);
      n = v.norm();
    }
    return v / n;
  }

 private:
  int dim_;
};

/// Fills the padded embedding matrix; masked-off rows are zero.
inline TokenizedPrompt embed_words(TokenizedPrompt prompt,
                                   const WordEmbedder& backend) {
  prompt.embeddings =
      Eigen::MatrixXd::Zero(TokenizedPrompt::kMaxTokens, backend.dim());
  for (int k = 0; k < prompt.valid_count(); ++k)
    prompt.embeddings.row(k) = backend.embed(prompt.token_ids[k]);
  validate_prompt(prompt);
  return prompt;
}

/// The unconditional branch for classifier-free guidance: only the two
/// boundary markers are valid, embedded by the deterministic stub.
inline TokenizedPrompt null_prompt(int dim) {
  TokenizedPrompt p;
  p.token_ids = {TokenizedPrompt::kStartId, TokenizedPrompt::kEndId};
  p.mask.assign(TokenizedPrompt::kMaxTokens, 0);
  p.mask[0] = p.mask[1] = 1;
  return embed_words(std::move(p), StubWordEmbedder(dim));
}

// -- embedding exchange records ----------------------------------------------
//
// Binary record {magic "T2IEMB1", D: u32, L: u32, row-major float32
// little-endian L x D}; records may be concatenated in one stream.

namespace detail {
inline void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw CorruptFile("truncated u32");
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
         (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

inline void write_f32(std::ostream& out, float v) {
  static_assert(sizeof(float) == 4);
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(out, bits);
}

inline float read_f32(std::istream& in) {
  std::uint32_t bits = read_u32(in);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}
}  // namespace detail

inline constexpr char kEmbeddingMagic[] = "T2IEMB1";

inline void write_embedding_record(std::ostream& out,
                                   const Eigen::MatrixXd& rows) {
  out.write(kEmbeddingMagic, 7);
  detail::write_u32(out, static_cast<std::uint32_t>(rows.cols()));
  detail::write_u32(out, static_cast<std::uint32_t>(rows.rows()));
  for (long r = 0; r < rows.rows(); ++r)
    for (long c = 0; c < rows.cols(); ++c)
      detail::write_f32(out, static_cast<float>(rows(r, c)));
}

inline Eigen::MatrixXd read_embedding_record(std::istream& in) {
  char magic[7];
  in.read(magic, 7);
  if (!in || std::string(magic, 7) != kEmbeddingMagic)
    throw CorruptFile("bad embedding record magic");
  std::uint32_t D = detail::read_u32(in);
  std::uint32_t L = detail::read_u32(in);
  require<CorruptFile>(D > 0 && L > 0, "degenerate embedding record");
  Eigen::MatrixXd rows(L, D);
  for (std::uint32_t r = 0; r < L; ++r)
    for (std::uint32_t c = 0; c < D; ++c) rows(r, c) = detail::read_f32(in);
  if (!in) throw CorruptFile("truncated embedding record");
  return rows;
}

}  // namespace duet
