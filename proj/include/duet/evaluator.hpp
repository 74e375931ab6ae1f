#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "duet/denoiser.hpp"
#include "duet/motion.hpp"
#include "duet/optimizer.hpp"
#include "duet/params.hpp"
#include "duet/text.hpp"

namespace duet {

/// Contrastive text-motion evaluator: a motion encoder over the
/// concatenated two-agent frames and a text head over frozen per-word
/// embeddings, trained into one shared unit-norm embedding space.
struct EvaluatorConfig {
  int channel_width = 262;  // per agent; motion input rows are 2x this
  int model_width = 64;
  int head_count = 4;
  int block_count = 2;
  int text_width = 256;
  int embed_dim = 512;
  int max_frames = 300;

  void validate() const {
    require<BadArgument>(channel_width >= 22 && model_width > 0 &&
                             head_count > 0 && block_count > 0 &&
                             text_width > 0 && embed_dim > 0 && max_frames > 0,
                         "evaluator config fields must be positive");
    require<BadArgument>(model_width % head_count == 0,
                         "model width must split across heads");
  }
};

namespace detail {

/// Pre-norm transformer block weights: self-attention plus a two-layer
/// feed-forward, both residual.
struct EncoderBlockWeights {
  AttentionWeights attn;
  ad::Var mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

}  // namespace detail

struct EvaluatorParameters {
  EvaluatorConfig config;
  ParamStore store;

  static constexpr double kMaxLogitScale = 4.605170185988091;  // ln(100)

  static EvaluatorParameters init(const EvaluatorConfig& cfg, Rng& rng) {
    cfg.validate();
    EvaluatorParameters p;
    p.config = cfg;
    const int W = cfg.model_width;
    auto zeros = [](long r, long c) { return Mat::Zero(r, c); };
    auto add_block = [&](const std::string& prefix) {
      p.store.add(prefix + ".q_w", dense_init(rng, W, W));
      p.store.add(prefix + ".q_b", zeros(1, W));
      p.store.add(prefix + ".k_w", dense_init(rng, W, W));
      p.store.add(prefix + ".k_b", zeros(1, W));
      p.store.add(prefix + ".v_w", dense_init(rng, W, W));
      p.store.add(prefix + ".v_b", zeros(1, W));
      p.store.add(prefix + ".out_w", dense_init(rng, W, W));
      p.store.add(prefix + ".out_b", zeros(1, W));
      p.store.add(prefix + ".mlp_w1", dense_init(rng, W, 2 * W));
      p.store.add(prefix + ".mlp_b1", zeros(1, 2 * W));
      p.store.add(prefix + ".mlp_w2", dense_init(rng, 2 * W, W));
      p.store.add(prefix + ".mlp_b2", zeros(1, W));
    };

    p.store.add("m.in_proj.w", dense_init(rng, 2 * cfg.channel_width, W));
    p.store.add("m.in_proj.b", zeros(1, W));
    for (int k = 0; k < cfg.block_count; ++k)
      add_block("m.blk" + std::to_string(k));
    p.store.add("m.out.w", dense_init(rng, W, cfg.embed_dim));
    p.store.add("m.out.b", zeros(1, cfg.embed_dim));

    p.store.add("t.in_proj.w", dense_init(rng, cfg.text_width, W));
    p.store.add("t.in_proj.b", zeros(1, W));
    for (int k = 0; k < cfg.block_count; ++k)
      add_block("t.blk" + std::to_string(k));
    p.store.add("t.out.w", dense_init(rng, W, cfg.embed_dim));
    p.store.add("t.out.b", zeros(1, cfg.embed_dim));

    // Learnable inverse temperature, stored as its logarithm.
    p.store.add("logit_scale", Mat::Constant(1, 1, std::log(1.0 / 0.07)));
    return p;
  }

  detail::EncoderBlockWeights block(const std::string& prefix) {
    detail::EncoderBlockWeights w;
    w.attn = {store.at(prefix + ".q_w"), store.at(prefix + ".q_b"),
              store.at(prefix + ".k_w"), store.at(prefix + ".k_b"),
              store.at(prefix + ".v_w"), store.at(prefix + ".v_b"),
              store.at(prefix + ".out_w"), store.at(prefix + ".out_b")};
    w.mlp_w1 = store.at(prefix + ".mlp_w1");
    w.mlp_b1 = store.at(prefix + ".mlp_b1");
    w.mlp_w2 = store.at(prefix + ".mlp_w2");
    w.mlp_b2 = store.at(prefix + ".mlp_b2");
    return w;
  }

  /// Keeps exp(logit_scale) within (1/100, 100); call after each update.
  void clamp_logit_scale() {
    double& s = store.at("logit_scale").mutable_value()(0, 0);
    s = std::min(kMaxLogitScale, std::max(-kMaxLogitScale, s));
  }
};

namespace detail {

inline ad::Var encoder_block(const ad::Var& x, const EncoderBlockWeights& w,
                             int heads, const ad::Mask& valid) {
  ad::Var n1 = ad::layer_norm_rows(x);
  ad::Var attn = multihead_attention(
      project(n1, w.attn.q_w, w.attn.q_b), project(n1, w.attn.k_w, w.attn.k_b),
      project(n1, w.attn.v_w, w.attn.v_b), heads, valid);
  ad::Var h = ad::add(x, project(attn, w.attn.out_w, w.attn.out_b));
  ad::Var n2 = ad::layer_norm_rows(h);
  ad::Var mlp = project(ad::silu(project(n2, w.mlp_w1, w.mlp_b1)), w.mlp_w2,
                        w.mlp_b2);
  return ad::add(h, mlp);
}

inline ad::Var encode_tokens(const ad::Var& tokens, const std::string& side,
                             EvaluatorParameters& params,
                             const ad::Mask& valid) {
  const EvaluatorConfig& cfg = params.config;
  ad::Var h = ad::add(
      project(tokens, params.store.at(side + ".in_proj.w"),
              params.store.at(side + ".in_proj.b")),
      ad::Var::leaf(positional_encoding(static_cast<int>(tokens.rows()),
                                        cfg.model_width)));
  for (int k = 0; k < cfg.block_count; ++k)
    h = encoder_block(h, params.block(side + ".blk" + std::to_string(k)),
                      cfg.head_count, valid);
  ad::Var pooled = ad::masked_mean_rows(h, valid);
  ad::Var out = project(pooled, params.store.at(side + ".out.w"),
                        params.store.at(side + ".out.b"));
  return ad::l2_normalize_rows(out);
}

}  // namespace detail

/// Differentiable motion embedding: 1 x embed_dim, unit norm. The input
/// is the two agents' flat representations side by side.
inline ad::Var encode_motion(const ad::Var& joint_flat,
                             EvaluatorParameters& params,
                             const ad::Mask& frame_mask = {}) {
  const EvaluatorConfig& cfg = params.config;
  require<ShapeMismatch>(joint_flat.cols() == 2 * cfg.channel_width,
                         "motion input must hold both agents' channels");
  require<BadArgument>(joint_flat.rows() > 0 &&
                           joint_flat.rows() <= cfg.max_frames,
                       "frame count out of range");
  ad::Mask valid = frame_mask;
  if (valid.empty()) valid.assign(joint_flat.rows(), 1);
  require<ShapeMismatch>(valid.size() == static_cast<size_t>(joint_flat.rows()),
                         "frame mask length");
  return detail::encode_tokens(joint_flat, "m", params, valid);
}

inline Eigen::RowVectorXd encode_motion(const InteractionSample& sample,
                                        EvaluatorParameters& params,
                                        const ad::Mask& frame_mask = {}) {
  ad::NoGradGuard guard;
  Mat joint(sample.frames(), 2 * params.config.channel_width);
  Mat f1 = build_representation(sample.agents[0]);
  Mat f2 = build_representation(sample.agents[1]);
  require<ShapeMismatch>(f1.cols() == params.config.channel_width,
                         "sample joint count mismatch");
  joint << f1, f2;
  return encode_motion(ad::Var::leaf(joint), params, frame_mask).value().row(0);
}

/// Differentiable text embedding over the prompt's frozen word vectors.
inline ad::Var encode_text(const TokenizedPrompt& prompt,
                           EvaluatorParameters& params) {
  require<BadArgument>(prompt.embedded(), "prompt must carry embeddings");
  require<ShapeMismatch>(prompt.dim() == params.config.text_width,
                         "prompt embedding width mismatch");
  return detail::encode_tokens(ad::Var::leaf(prompt.embeddings), "t", params,
                               prompt.mask);
}

inline Eigen::RowVectorXd encode_text_vector(const TokenizedPrompt& prompt,
                                             EvaluatorParameters& params) {
  ad::NoGradGuard guard;
  return encode_text(prompt, params).value().row(0);
}

/// Symmetric cross-entropy over the scaled cosine-similarity matrix with
/// matched pairs on the diagonal.
inline ad::Var contrastive_loss(const ad::Var& text_embs,
                                const ad::Var& motion_embs,
                                const ad::Var& logit_scale) {
  require<ShapeMismatch>(text_embs.rows() == motion_embs.rows() &&
                             text_embs.cols() == motion_embs.cols(),
                         "embedding batch shapes must match");
  require<BadArgument>(text_embs.rows() >= 2, "contrastive batch needs B >= 2");
  ad::Var logits = ad::scalar_mul(ad::matmul(text_embs, motion_embs, false, true),
                                  ad::exp(logit_scale));
  ad::Var t2m = ad::scale(ad::trace_mean(ad::log_softmax_rows(logits)), -1.0);
  ad::Var m2t = ad::scale(
      ad::trace_mean(ad::log_softmax_rows(ad::transpose(logits))), -1.0);
  return ad::scale(ad::add(t2m, m2t), 0.5);
}

/// Loss value at a fixed temperature (no graph).
inline double contrastive_loss(const Mat& text_embs, const Mat& motion_embs,
                               double temperature) {
  require<BadArgument>(temperature > 0.0, "temperature must be positive");
  ad::NoGradGuard guard;
  ad::Var scale_var =
      ad::Var::leaf(Mat::Constant(1, 1, std::log(1.0 / temperature)));
  return contrastive_loss(ad::Var::leaf(text_embs), ad::Var::leaf(motion_embs),
                          scale_var)
      .value()(0, 0);
}

// -- training -----------------------------------------------------------------

/// One evaluator training example: the concatenated two-agent frames and
/// the embedded caption.
struct EvalItem {
  Mat joint_flat;  // T x 2*channel_width
  TokenizedPrompt prompt;
  ad::Mask frame_mask;
};

inline EvalItem make_eval_item(const InteractionSample& sample,
                               const TokenizedPrompt& prompt) {
  Mat f1 = build_representation(sample.agents[0]);
  Mat f2 = build_representation(sample.agents[1]);
  EvalItem item;
  item.joint_flat.resize(f1.rows(), f1.cols() + f2.cols());
  item.joint_flat << f1, f2;
  item.prompt = prompt;
  return item;
}

struct EvaluatorTrainConfig {
  int epochs = 8;
  int batch_size = 16;
  OptimizerConfig optimizer = [] {
    OptimizerConfig cfg;
    cfg.lr = 1e-3;
    cfg.warmup_steps = 20;
    cfg.total_steps = 2000;
    cfg.weight_decay = 0.0;
    return cfg;
  }();
};

struct TrainedEvaluator {
  EvaluatorParameters params;
  std::vector<double> epoch_losses;
};

/// Minibatch contrastive training; deterministic given the rng seed.
inline TrainedEvaluator train_evaluator(const std::vector<EvalItem>& items,
                                        const EvaluatorConfig& cfg,
                                        const EvaluatorTrainConfig& train_cfg,
                                        Rng& rng) {
  require<DatasetTooSmall>(items.size() >= 4, "need at least 4 samples");
  TrainedEvaluator out{EvaluatorParameters::init(cfg, rng), {}};
  AdamW opt(out.params.store, train_cfg.optimizer);

  std::vector<size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  const int B = std::max(2, std::min<int>(train_cfg.batch_size,
                                          static_cast<int>(items.size())));
  for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    int batches = 0;
    for (size_t at = 0; at + B <= order.size(); at += B) {
      std::vector<ad::Var> text_rows, motion_rows;
      for (int i = 0; i < B; ++i) {
        const EvalItem& item = items[order[at + i]];
        motion_rows.push_back(
            encode_motion(ad::Var::leaf(item.joint_flat), out.params,
                          item.frame_mask));
        text_rows.push_back(encode_text(item.prompt, out.params));
      }
      ad::Var text = ad::concat_rows(text_rows);
      ad::Var motion = ad::concat_rows(motion_rows);
      ad::Var loss =
          contrastive_loss(text, motion, out.params.store.at("logit_scale"));
      require<NonFiniteLoss>(std::isfinite(loss.value()(0, 0)),
                             "contrastive loss is not finite");
      out.params.store.zero_grads();
      ad::backward(loss);
      opt.step();
      out.params.clamp_logit_scale();
      epoch_loss += loss.value()(0, 0);
      ++batches;
    }
    require<DatasetTooSmall>(batches > 0, "dataset smaller than one batch");
    out.epoch_losses.push_back(epoch_loss / batches);
  }
  return out;
}

}  // namespace duet
