#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "duet/autodiff.hpp"
#include "duet/params.hpp"
#include "duet/text.hpp"

namespace duet {

struct ModelConfig {
  enum class Scheme { parallel, alternating };

  int block_pairs = 12;
  int model_width = 256;
  int head_count = 8;
  int text_width = 256;     // word-embedding dimension D
  int channel_width = 262;  // flat per-frame motion channels
  int max_frames = 300;
  int diffusion_steps = 1000;
  Scheme update_scheme = Scheme::parallel;

  void validate() const {
    require<BadArgument>(block_pairs >= 1, "block_pairs must be >= 1");
    require<BadArgument>(model_width >= 2 && head_count >= 1,
                         "degenerate widths");
    require<BadArgument>(model_width % head_count == 0,
                         "model_width must be divisible by head_count");
    require<BadArgument>(text_width >= 2 && channel_width >= 1, "bad widths");
    require<BadArgument>(max_frames >= 1 && diffusion_steps >= 2,
                         "bad bounds");
  }
};

inline const char* to_string(ModelConfig::Scheme s) {
  return s == ModelConfig::Scheme::parallel ? "parallel" : "alternating";
}

inline ModelConfig::Scheme scheme_from_string(const std::string& s) {
  if (s == "parallel") return ModelConfig::Scheme::parallel;
  if (s == "alternating") return ModelConfig::Scheme::alternating;
  throw BadArgument("unknown update scheme: " + s);
}

// -- deterministic encodings --------------------------------------------------

/// Sinusoidal features of an integer diffusion level; distinct for every
/// level in a schedule's range.
inline Mat timestep_embedding(int t, int width, int max_level = 1000) {
  require<OutOfRange>(t >= 0 && t <= max_level, "diffusion level out of range");
  require<BadArgument>(width >= 2 && width % 2 == 0,
                       "embedding width must be even");
  Mat e(1, width);
  for (int i = 0; i < width / 2; ++i) {
    double freq = std::pow(10000.0, -2.0 * i / width);
    e(0, 2 * i) = std::sin(t * freq);
    e(0, 2 * i + 1) = std::cos(t * freq);
  }
  return e;
}

/// Standard sinusoidal positional encoding over frame indices.
inline Mat positional_encoding(int frames, int width) {
  require<BadArgument>(width % 2 == 0, "width must be even");
  Mat pe(frames, width);
  for (int t = 0; t < frames; ++t)
    for (int i = 0; i < width / 2; ++i) {
      double freq = std::pow(10000.0, -2.0 * i / width);
      pe(t, 2 * i) = std::sin(t * freq);
      pe(t, 2 * i + 1) = std::cos(t * freq);
    }
  return pe;
}

// -- weight views -------------------------------------------------------------

/// Scale/shift producers for adaptive layer norm; all zero at init so the
/// module starts as plain layer norm.
struct AdaLNWeights {
  ad::Var scale_w, scale_b, shift_w, shift_b;
};

struct AttentionWeights {
  ad::Var q_w, q_b, k_w, k_b, v_w, v_b, out_w, out_b;
};

struct WordBlockWeights {
  AdaLNWeights ada_motion, ada_text;
  AttentionWeights attn;
};

struct InteractionBlockWeights {
  AdaLNWeights ada_self, ada_cross_q, ada_cross_kv;
  AttentionWeights self_attn, cross_attn;
};

/// Denoiser parameters: one weight set per block pair, shared by both
/// agents, plus input/output projections and the timestep MLP.
struct DenoiserParameters {
  ModelConfig config;
  ParamStore store;

  static DenoiserParameters init(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    DenoiserParameters p;
    p.config = cfg;
    const int W = cfg.model_width, D = cfg.text_width, C = cfg.channel_width;
    auto zeros = [](long r, long c) { return Mat::Zero(r, c); };

    p.store.add("time.w1", dense_init(rng, W, W));
    p.store.add("time.b1", zeros(1, W));
    p.store.add("time.w2", dense_init(rng, W, W));
    p.store.add("time.b2", zeros(1, W));
    p.store.add("in_proj.w", dense_init(rng, C, W));
    p.store.add("in_proj.b", zeros(1, W));

    auto add_adaln = [&](const std::string& prefix, int dim) {
      p.store.add(prefix + ".scale_w", zeros(W, dim));
      p.store.add(prefix + ".scale_b", zeros(1, dim));
      p.store.add(prefix + ".shift_w", zeros(W, dim));
      p.store.add(prefix + ".shift_b", zeros(1, dim));
    };
    auto add_attn = [&](const std::string& prefix, int kv_dim) {
      p.store.add(prefix + ".q_w", dense_init(rng, W, W));
      p.store.add(prefix + ".q_b", zeros(1, W));
      p.store.add(prefix + ".k_w", dense_init(rng, kv_dim, W));
      p.store.add(prefix + ".k_b", zeros(1, W));
      p.store.add(prefix + ".v_w", dense_init(rng, kv_dim, W));
      p.store.add(prefix + ".v_b", zeros(1, W));
      p.store.add(prefix + ".out_w", zeros(W, W));  // blocks start as identity
      p.store.add(prefix + ".out_b", zeros(1, W));
    };

    for (int k = 0; k < cfg.block_pairs; ++k) {
      const std::string blk = "blk" + std::to_string(k);
      add_adaln(blk + ".word.ada_m", W);
      add_adaln(blk + ".word.ada_t", D);
      add_attn(blk + ".word", D);
      add_adaln(blk + ".self.ada", W);
      add_attn(blk + ".self", W);
      add_adaln(blk + ".cross.ada_q", W);
      add_adaln(blk + ".cross.ada_kv", W);
      add_attn(blk + ".cross", W);
    }
    p.store.add("out_proj.w", zeros(W, C));  // zero final layer at init
    p.store.add("out_proj.b", zeros(1, C));
    return p;
  }

  AdaLNWeights adaln(const std::string& prefix) {
    return {store.at(prefix + ".scale_w"), store.at(prefix + ".scale_b"),
            store.at(prefix + ".shift_w"), store.at(prefix + ".shift_b")};
  }
  AttentionWeights attention(const std::string& prefix) {
    return {store.at(prefix + ".q_w"),   store.at(prefix + ".q_b"),
            store.at(prefix + ".k_w"),   store.at(prefix + ".k_b"),
            store.at(prefix + ".v_w"),   store.at(prefix + ".v_b"),
            store.at(prefix + ".out_w"), store.at(prefix + ".out_b")};
  }
  WordBlockWeights word_block(int k) {
    const std::string blk = "blk" + std::to_string(k);
    return {adaln(blk + ".word.ada_m"), adaln(blk + ".word.ada_t"),
            attention(blk + ".word")};
  }
  InteractionBlockWeights interaction_block_weights(int k) {
    const std::string blk = "blk" + std::to_string(k);
    return {adaln(blk + ".self.ada"), adaln(blk + ".cross.ada_q"),
            adaln(blk + ".cross.ada_kv"), attention(blk + ".self"),
            attention(blk + ".cross")};
  }
};

// -- building blocks ----------------------------------------------------------

/// Layer norm followed by a timestep-conditioned scale and shift:
/// y = LN(x) .* (1 + scale(t_emb)) + shift(t_emb).
inline ad::Var adaln_modulate(const ad::Var& x, const ad::Var& t_emb,
                              const AdaLNWeights& w) {
  require<ShapeMismatch>(t_emb.rows() == 1, "t_emb must be a row vector");
  require<ShapeMismatch>(w.scale_w.rows() == t_emb.cols() &&
                             w.scale_w.cols() == x.cols(),
                         "AdaLN producer shape");
  ad::Var scale = ad::bias_add(ad::matmul(t_emb, w.scale_w), w.scale_b);
  ad::Var shift = ad::bias_add(ad::matmul(t_emb, w.shift_w), w.shift_b);
  ad::Var normed = ad::layer_norm_rows(x);
  return ad::bias_add(ad::row_mul(normed, ad::add_scalar(scale, 1.0)), shift);
}

/// Multi-head scaled dot-product attention; key positions with mask off
/// receive exactly zero weight.
inline ad::Var multihead_attention(const ad::Var& Q, const ad::Var& K,
                                   const ad::Var& V, int heads,
                                   const ad::Mask& key_valid) {
  const long W = Q.cols();
  require<ShapeMismatch>(K.cols() == W && V.cols() == W && K.rows() == V.rows(),
                         "attention projection widths must agree");
  require<BadArgument>(W % heads == 0, "width not divisible by head count");
  const long d = W / heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(double(d));
  std::vector<ad::Var> outs;
  outs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    ad::Var Qh = ad::slice_cols(Q, h * d, d);
    ad::Var Kh = ad::slice_cols(K, h * d, d);
    ad::Var Vh = ad::slice_cols(V, h * d, d);
    ad::Var logits = ad::scale(ad::matmul(Qh, Kh, false, true), inv_sqrt_d);
    ad::Var attn = ad::softmax_rows_masked(logits, key_valid);
    outs.push_back(ad::matmul(attn, Vh));
  }
  return heads == 1 ? outs[0] : ad::concat_cols(outs);
}

inline ad::Var project(const ad::Var& x, const ad::Var& w, const ad::Var& b) {
  return ad::bias_add(ad::matmul(x, w), b);
}

/// Residual cross-attention from motion tokens to the prompt's word
/// embeddings. Masked text positions contribute nothing.
inline ad::Var word_conditioning_block(const ad::Var& agent_tokens,
                                       const TokenizedPrompt& prompt,
                                       const ad::Var& t_emb,
                                       const WordBlockWeights& w, int heads) {
  require<BadArgument>(prompt.embedded(), "prompt must carry embeddings");
  require<BadArgument>(!prompt.mask.empty(), "prompt must carry a mask");
  ad::Var words = ad::Var::leaf(prompt.embeddings);
  ad::Var m = adaln_modulate(agent_tokens, t_emb, w.ada_motion);
  ad::Var word_feats = adaln_modulate(words, t_emb, w.ada_text);
  ad::Var attn = multihead_attention(
      project(m, w.attn.q_w, w.attn.q_b),
      project(word_feats, w.attn.k_w, w.attn.k_b),
      project(word_feats, w.attn.v_w, w.attn.v_b), heads, prompt.mask);
  return ad::add(agent_tokens, project(attn, w.attn.out_w, w.attn.out_b));
}

/// Self-attention over the agent's own tokens followed by cross-attention
/// into the partner's tokens; both residual, both AdaLN-modulated.
inline ad::Var interaction_block(const ad::Var& self_tokens,
                                 const ad::Var& partner_tokens,
                                 const ad::Var& t_emb,
                                 const InteractionBlockWeights& w, int heads,
                                 const ad::Mask& frame_mask) {
  require<ShapeMismatch>(self_tokens.rows() == partner_tokens.rows(),
                         "agents must share frame count");
  ad::Var s = adaln_modulate(self_tokens, t_emb, w.ada_self);
  ad::Var self_attn = multihead_attention(
      project(s, w.self_attn.q_w, w.self_attn.q_b),
      project(s, w.self_attn.k_w, w.self_attn.k_b),
      project(s, w.self_attn.v_w, w.self_attn.v_b), heads, frame_mask);
  ad::Var x =
      ad::add(self_tokens,
              project(self_attn, w.self_attn.out_w, w.self_attn.out_b));

  ad::Var q_side = adaln_modulate(x, t_emb, w.ada_cross_q);
  ad::Var kv_side = adaln_modulate(partner_tokens, t_emb, w.ada_cross_kv);
  ad::Var cross = multihead_attention(
      project(q_side, w.cross_attn.q_w, w.cross_attn.q_b),
      project(kv_side, w.cross_attn.k_w, w.cross_attn.k_b),
      project(kv_side, w.cross_attn.v_w, w.cross_attn.v_b), heads, frame_mask);
  return ad::add(x, project(cross, w.cross_attn.out_w, w.cross_attn.out_b));
}

// -- full denoiser ------------------------------------------------------------

struct DenoiseOptions {
  ad::Mask frame_mask;  // empty = all frames valid
  int first_agent = 0;  // alternating scheme: which slot updates first
};

/// Predicts both agents' clean representations from their noised
/// representations at level t. One weight set serves both agents.
inline std::pair<ad::Var, ad::Var> denoise(const ad::Var& x1_t,
                                           const ad::Var& x2_t, int t,
                                           const TokenizedPrompt& prompt,
                                           DenoiserParameters& params,
                                           const DenoiseOptions& opts = {}) {
  const ModelConfig& cfg = params.config;
  const int T = static_cast<int>(x1_t.rows());
  require<ShapeMismatch>(x1_t.cols() == cfg.channel_width &&
                             x2_t.cols() == cfg.channel_width,
                         "channel width mismatch");
  require<ShapeMismatch>(x2_t.rows() == T, "agents must share frame count");
  require<OutOfRange>(t >= 0 && t < cfg.diffusion_steps,
                      "diffusion level out of range");
  require<BadArgument>(T <= cfg.max_frames, "sequence exceeds max_frames");
  require<ShapeMismatch>(prompt.embedded() &&
                             prompt.dim() == cfg.text_width,
                         "prompt embedding width mismatch");

  ad::Mask frame_mask = opts.frame_mask;
  if (frame_mask.empty()) frame_mask.assign(T, 1);
  require<ShapeMismatch>(static_cast<int>(frame_mask.size()) == T,
                         "frame mask length");
  require<BadArgument>(opts.first_agent == 0 || opts.first_agent == 1,
                       "first_agent must be 0 or 1");

  ad::Var t_sin = ad::Var::leaf(
      timestep_embedding(t, cfg.model_width, cfg.diffusion_steps));
  ad::Var t_emb = project(
      ad::silu(project(t_sin, params.store.at("time.w1"),
                       params.store.at("time.b1"))),
      params.store.at("time.w2"), params.store.at("time.b2"));

  ad::Var pe = ad::Var::leaf(positional_encoding(T, cfg.model_width));
  auto embed_in = [&](const ad::Var& x) {
    return ad::add(project(x, params.store.at("in_proj.w"),
                           params.store.at("in_proj.b")),
                   pe);
  };
  ad::Var h[2] = {embed_in(x1_t), embed_in(x2_t)};

  for (int k = 0; k < cfg.block_pairs; ++k) {
    WordBlockWeights wb = params.word_block(k);
    InteractionBlockWeights ib = params.interaction_block_weights(k);
    auto update = [&](const ad::Var& self, const ad::Var& partner) {
      ad::Var c = word_conditioning_block(self, prompt, t_emb, wb,
                                          cfg.head_count);
      return interaction_block(c, partner, t_emb, ib, cfg.head_count,
                               frame_mask);
    };
    if (cfg.update_scheme == ModelConfig::Scheme::parallel) {
      ad::Var h0 = update(h[0], h[1]);
      ad::Var h1 = update(h[1], h[0]);
      h[0] = h0;
      h[1] = h1;
    } else {
      const int a = opts.first_agent, b = 1 - opts.first_agent;
      h[a] = update(h[a], h[b]);
      h[b] = update(h[b], h[a]);
    }
  }

  auto project_out = [&](const ad::Var& x) {
    return project(x, params.store.at("out_proj.w"),
                   params.store.at("out_proj.b"));
  };
  return {project_out(h[0]), project_out(h[1])};
}

/// Graph-free convenience overload for sampling.
inline std::pair<Mat, Mat> denoise(const Mat& x1_t, const Mat& x2_t, int t,
                                   const TokenizedPrompt& prompt,
                                   DenoiserParameters& params,
                                   const DenoiseOptions& opts = {}) {
  ad::NoGradGuard guard;
  auto [a, b] = denoise(ad::Var::leaf(x1_t), ad::Var::leaf(x2_t), t, prompt,
                        params, opts);
  return {a.value(), b.value()};
}

}  // namespace duet
