#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>

#include "json.hpp"

#include "duet/denoiser.hpp"
#include "duet/evaluator.hpp"
#include "duet/params.hpp"
#include "duet/text.hpp"

namespace duet {

// Checkpoint layout: magic "DUETCKP1", u32 header length, JSON header
// {meta, tensors: [{name, rows, cols}]}, then float64 little-endian
// payloads in tensor order. Doubles round-trip bit-exactly.

inline constexpr char kCheckpointMagic[] = "DUETCKP1";

namespace detail {

inline void write_u64(std::ostream& out, std::uint64_t v) {
  write_u32(out, static_cast<std::uint32_t>(v & 0xffffffffu));
  write_u32(out, static_cast<std::uint32_t>(v >> 32));
}

inline std::uint64_t read_u64(std::istream& in) {
  std::uint64_t lo = read_u32(in);
  std::uint64_t hi = read_u32(in);
  return lo | (hi << 32);
}

inline void write_f64(std::ostream& out, double v) {
  static_assert(sizeof(double) == 8);
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  write_u64(out, bits);
}

inline double read_f64(std::istream& in) {
  std::uint64_t bits = read_u64(in);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace detail

inline void save_params(const std::string& path, const ParamStore& store,
                        const nlohmann::json& meta) {
  std::ofstream out(path, std::ios::binary);
  require<IoError>(out.good(), "cannot open for writing: " + path);

  nlohmann::json header;
  header["meta"] = meta;
  header["tensors"] = nlohmann::json::array();
  for (const auto& name : store.names) {
    const ad::Var& p = store.at(name);
    header["tensors"].push_back(
        {{"name", name}, {"rows", p.rows()}, {"cols", p.cols()}});
  }
  const std::string head = header.dump();

  out.write(kCheckpointMagic, 8);
  detail::write_u32(out, static_cast<std::uint32_t>(head.size()));
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  for (const auto& name : store.names) {
    const Mat& v = store.at(name).value();
    for (long r = 0; r < v.rows(); ++r)
      for (long c = 0; c < v.cols(); ++c) detail::write_f64(out, v(r, c));
  }
  require<IoError>(out.good(), "write failed: " + path);
}

inline std::pair<ParamStore, nlohmann::json> load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require<IoError>(in.good(), "cannot open for reading: " + path);

  char magic[8];
  in.read(magic, 8);
  require<CorruptFile>(in.good() && std::memcmp(magic, kCheckpointMagic, 8) == 0,
                       "bad checkpoint magic");
  const std::uint32_t head_len = detail::read_u32(in);
  std::string head(head_len, '\0');
  in.read(head.data(), head_len);
  require<CorruptFile>(in.good(), "truncated checkpoint header");

  nlohmann::json header = nlohmann::json::parse(head, nullptr, false);
  require<CorruptFile>(!header.is_discarded() && header.contains("tensors"),
                       "unparseable checkpoint header");

  ParamStore store;
  for (const auto& t : header["tensors"]) {
    const std::string name = t.at("name").get<std::string>();
    const long rows = t.at("rows").get<long>();
    const long cols = t.at("cols").get<long>();
    require<CorruptFile>(rows >= 0 && cols >= 0, "bad tensor shape");
    Mat v(rows, cols);
    for (long r = 0; r < rows; ++r)
      for (long c = 0; c < cols; ++c) {
        if (!in.good()) throw CorruptFile("truncated checkpoint payload");
        v(r, c) = detail::read_f64(in);
      }
    store.add(name, std::move(v));
  }
  require<CorruptFile>(in.good(), "truncated checkpoint payload");
  return {std::move(store), header["meta"]};
}

inline nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  return {{"block_pairs", cfg.block_pairs},
          {"model_width", cfg.model_width},
          {"head_count", cfg.head_count},
          {"text_width", cfg.text_width},
          {"channel_width", cfg.channel_width},
          {"max_frames", cfg.max_frames},
          {"diffusion_steps", cfg.diffusion_steps},
          {"update_scheme", to_string(cfg.update_scheme)}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.block_pairs = j.at("block_pairs").get<int>();
  cfg.model_width = j.at("model_width").get<int>();
  cfg.head_count = j.at("head_count").get<int>();
  cfg.text_width = j.at("text_width").get<int>();
  cfg.channel_width = j.at("channel_width").get<int>();
  cfg.max_frames = j.at("max_frames").get<int>();
  cfg.diffusion_steps = j.at("diffusion_steps").get<int>();
  cfg.update_scheme = scheme_from_string(j.at("update_scheme").get<std::string>());
  cfg.validate();
  return cfg;
}

inline void save_denoiser(const std::string& path,
                          const DenoiserParameters& params) {
  nlohmann::json meta;
  meta["kind"] = "denoiser";
  meta["model"] = model_config_to_json(params.config);
  save_params(path, params.store, meta);
}

inline DenoiserParameters load_denoiser(const std::string& path) {
  auto [store, meta] = load_params(path);
  require<CorruptFile>(meta.is_object() && meta.value("kind", "") == "denoiser",
                       "not a denoiser checkpoint");
  DenoiserParameters params;
  params.config = model_config_from_json(meta.at("model"));
  params.store = std::move(store);
  // Every tensor the architecture expects must be present.
  duet::Rng probe(0);
  auto expected = DenoiserParameters::init(params.config, probe);
  for (const auto& name : expected.store.names) {
    require<CorruptFile>(params.store.has(name),
                         "checkpoint missing tensor: " + name);
    const ad::Var& got = params.store.at(name);
    const ad::Var& want = expected.store.at(name);
    require<CorruptFile>(got.rows() == want.rows() && got.cols() == want.cols(),
                         "checkpoint tensor shape mismatch: " + name);
  }
  return params;
}

inline nlohmann::json evaluator_config_to_json(const EvaluatorConfig& cfg) {
  return {{"channel_width", cfg.channel_width}, {"model_width", cfg.model_width},
          {"head_count", cfg.head_count},       {"block_count", cfg.block_count},
          {"text_width", cfg.text_width},       {"embed_dim", cfg.embed_dim},
          {"max_frames", cfg.max_frames}};
}

inline EvaluatorConfig evaluator_config_from_json(const nlohmann::json& j) {
  EvaluatorConfig cfg;
  cfg.channel_width = j.at("channel_width").get<int>();
  cfg.model_width = j.at("model_width").get<int>();
  cfg.head_count = j.at("head_count").get<int>();
  cfg.block_count = j.at("block_count").get<int>();
  cfg.text_width = j.at("text_width").get<int>();
  cfg.embed_dim = j.at("embed_dim").get<int>();
  cfg.max_frames = j.at("max_frames").get<int>();
  cfg.validate();
  return cfg;
}

inline void save_evaluator(const std::string& path,
                           const EvaluatorParameters& params) {
  nlohmann::json meta;
  meta["kind"] = "evaluator";
  meta["model"] = evaluator_config_to_json(params.config);
  save_params(path, params.store, meta);
}

inline EvaluatorParameters load_evaluator(const std::string& path) {
  auto [store, meta] = load_params(path);
  require<CorruptFile>(meta.is_object() && meta.value("kind", "") == "evaluator",
                       "not an evaluator checkpoint");
  EvaluatorParameters params;
  params.config = evaluator_config_from_json(meta.at("model"));
  params.store = std::move(store);
  duet::Rng probe(0);
  auto expected = EvaluatorParameters::init(params.config, probe);
  for (const auto& name : expected.store.names) {
    require<CorruptFile>(params.store.has(name),
                         "checkpoint missing tensor: " + name);
    const ad::Var& got = params.store.at(name);
    const ad::Var& want = expected.store.at(name);
    require<CorruptFile>(got.rows() == want.rows() && got.cols() == want.cols(),
                         "checkpoint tensor shape mismatch: " + name);
  }
  return params;
}

}  // namespace duet
