#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "duet/train.hpp"
#include "testutil.hpp"

namespace ad = duet::ad;
using duet::Mat;
using testutil::five_joint_skeleton;
using testutil::random_flat;

namespace {

constexpr int kWidth = 58;  // five-joint flat layout

duet::ModelConfig toy_config(int blocks = 2) {
  duet::ModelConfig cfg;
  cfg.block_pairs = blocks;
  cfg.model_width = 8;
  cfg.head_count = 2;
  cfg.text_width = 8;
  cfg.channel_width = kWidth;
  cfg.max_frames = 16;
  cfg.diffusion_steps = 100;
  return cfg;
}

duet::DenoiserParameters toy_params(duet::Rng& rng, int blocks = 2) {
  auto params = duet::DenoiserParameters::init(toy_config(blocks), rng);
  for (const auto& name : params.store.names) {
    ad::Var& v = params.store.at(name);
    v.mutable_value() = duet::random_normal(rng, v.rows(), v.cols(), 0.3);
  }
  return params;
}

duet::TokenizedPrompt embedded_prompt(const std::string& text, int dim = 8) {
  return duet::embed_words(duet::tokenize(text), duet::StubWordEmbedder(dim));
}

std::vector<duet::TrainItem> toy_batch(duet::Rng& rng, int items, int frames) {
  auto skel = five_joint_skeleton();
  std::vector<duet::TrainItem> batch;
  for (int i = 0; i < items; ++i) {
    duet::TrainItem item;
    item.x1 = random_flat(rng, skel, frames);
    item.x2 = random_flat(rng, skel, frames);
    item.prompt = embedded_prompt(i % 2 ? "they spin together" : "a slow push");
    batch.push_back(std::move(item));
  }
  return batch;
}

duet::ChannelStats toy_stats(duet::Rng& rng) {
  duet::ChannelStats stats;
  stats.mean = duet::random_normal(rng, 1, kWidth, 0.2);
  stats.std = (duet::random_uniform(rng, 1, kWidth, 0.5, 1.5));
  return stats;
}

}  // namespace

// -- normalization ------------------------------------------------------------

TEST(Normalize, IdentityStatsAreNoOp) {
  duet::Rng rng(1);
  Mat x = duet::random_normal(rng, 5, kWidth);
  auto stats = duet::ChannelStats::identity(kWidth);
  EXPECT_EQ((duet::normalize_rows(x, stats) - x).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ((duet::denormalize_rows(x, stats) - x).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Normalize, RoundTripWithinTolerance) {
  duet::Rng rng(2);
  Mat x = duet::random_normal(rng, 7, kWidth, 2.0);
  auto stats = toy_stats(rng);
  Mat back = duet::denormalize_rows(duet::normalize_rows(x, stats), stats);
  EXPECT_LT((back - x).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Normalize, ComputedStatsStandardizeTheData) {
  duet::Rng rng(3);
  std::vector<Mat> mats = {duet::random_normal(rng, 40, 6, 1.5),
                           duet::random_normal(rng, 25, 6, 1.5)};
  mats[0].array() += 3.0;
  mats[1].array() += 3.0;
  auto stats = duet::ChannelStats::compute(mats);
  Mat all(65, 6);
  all << mats[0], mats[1];
  Mat z = duet::normalize_rows(all, stats);
  EXPECT_LT(z.colwise().mean().cwiseAbs().maxCoeff(), 1e-3);
  Mat second = (z.array().square()).colwise().mean();
  EXPECT_LT((second.array() - 1.0).abs().maxCoeff(), 1e-9);
}

TEST(Normalize, ConstantChannelHitsStdFloor) {
  Mat x = Mat::Ones(10, 3) * 4.2;
  auto stats = duet::ChannelStats::compute({x});
  EXPECT_EQ(stats.std(0, 0), duet::ChannelStats::kStdFloor);
  EXPECT_NEAR(stats.mean(0, 1), 4.2, 1e-12);
}

TEST(Normalize, DifferentiableDenormalizeMatchesPlainAndGradients) {
  duet::Rng rng(4);
  auto stats = toy_stats(rng);
  Mat x = duet::random_normal(rng, 4, kWidth);
  ad::Var v = duet::denormalize(ad::Var::leaf(x), stats);
  EXPECT_LT((v.value() - duet::denormalize_rows(x, stats)).cwiseAbs().maxCoeff(),
            1e-15);
  double worst = testutil::fd_check(
      [&](std::vector<ad::Var>& leaves) {
        return ad::sum_all(ad::square(duet::denormalize(leaves[0], stats)));
      },
      {x});
  EXPECT_LE(worst, 1e-6);
}

// -- learning-rate schedule ---------------------------------------------------

TEST(Optimizer, WarmupIsLinearThenCosineToZero) {
  duet::OptimizerConfig cfg;
  cfg.warmup_steps = 1000;
  cfg.total_steps = 5000;
  EXPECT_NEAR(duet::lr_multiplier(cfg, 0), 1.0 / 1000, 1e-15);
  EXPECT_NEAR(duet::lr_multiplier(cfg, 499), 500.0 / 1000, 1e-15);
  EXPECT_NEAR(duet::lr_multiplier(cfg, 999), 1.0, 1e-15);
  // Halfway through the decay span the multiplier is one half.
  EXPECT_NEAR(duet::lr_multiplier(cfg, 3000), 0.5, 1e-12);
  EXPECT_NEAR(duet::lr_multiplier(cfg, 5000), 0.0, 1e-12);
  EXPECT_NEAR(duet::lr_multiplier(cfg, 9000), 0.0, 1e-12);
  for (long s = 1000; s < 5000; s += 250)
    EXPECT_GT(duet::lr_multiplier(cfg, s), duet::lr_multiplier(cfg, s + 250));
}

TEST(Optimizer, NoWarmupStartsAtFullRate) {
  duet::OptimizerConfig cfg;
  cfg.warmup_steps = 0;
  cfg.total_steps = 100;
  EXPECT_NEAR(duet::lr_multiplier(cfg, 0), 1.0, 1e-15);
}

// -- AdamW --------------------------------------------------------------------

TEST(Optimizer, MatchesScalarReferenceImplementation) {
  duet::OptimizerConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.04;
  cfg.warmup_steps = 0;
  cfg.total_steps = 1000000;  // keep cosine factor ~1 over a few steps
  duet::ParamStore store;
  store.add("w", Mat::Constant(1, 1, 1.0));

  // Independent scalar reference.
  double theta = 1.0, m = 0.0, v = 0.0;
  auto reference_step = [&](double g, double lr_t, int t) {
    m = cfg.beta1 * m + (1 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1 - cfg.beta2) * g * g;
    double mhat = m / (1 - std::pow(cfg.beta1, t));
    double vhat = v / (1 - std::pow(cfg.beta2, t));
    theta -= lr_t * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * theta);
  };

  duet::AdamW opt(store, cfg);
  std::vector<double> grads = {0.5, -1.25, 2.0, 0.125};
  for (int t = 1; t <= static_cast<int>(grads.size()); ++t) {
    double g = grads[t - 1];
    ad::Var loss = ad::scale(store.at("w"), g);
    store.zero_grads();
    ad::backward(loss);
    double lr_t = opt.current_lr();
    opt.step();
    reference_step(g, lr_t, t);
    EXPECT_NEAR(store.at("w").value()(0, 0), theta, 1e-14) << "step " << t;
  }
}

TEST(Optimizer, DecoupledDecayShrinksParamsWithZeroGradient) {
  duet::OptimizerConfig cfg;
  cfg.lr = 0.01;
  cfg.weight_decay = 0.5;
  cfg.warmup_steps = 0;
  cfg.total_steps = 1000000;
  duet::ParamStore store;
  store.add("w", Mat::Constant(2, 2, 2.0));
  duet::AdamW opt(store, cfg);
  store.zero_grads();
  opt.step();
  // No gradient: pure decay theta * (1 - lr*wd).
  EXPECT_NEAR(store.at("w").value()(0, 0), 2.0 * (1 - 0.01 * 0.5), 1e-14);
}

TEST(Optimizer, RejectsBadConfig) {
  duet::OptimizerConfig bad;
  bad.lr = 0.0;
  EXPECT_THROW(bad.validate(), duet::BadArgument);
  duet::OptimizerConfig bad2;
  bad2.beta1 = 1.0;
  EXPECT_THROW(bad2.validate(), duet::BadArgument);
}

// -- training loss in normalized space ----------------------------------------

TEST(Train, TrainingLossWithoutStatsMatchesTotalLoss) {
  duet::Rng rng(11);
  auto skel = five_joint_skeleton();
  Mat a = random_flat(rng, skel, 5), b = random_flat(rng, skel, 5);
  Mat ah = random_flat(rng, skel, 5), bh = random_flat(rng, skel, 5);
  duet::LossWeights w;
  auto leaf = [](const Mat& m) { return ad::Var::leaf(m); };
  auto [plain, plain_terms] =
      duet::total_loss(leaf(a), leaf(b), leaf(ah), leaf(bh), skel, w);
  auto [train, train_terms] = duet::training_loss(
      leaf(a), leaf(b), leaf(ah), leaf(bh), skel, w, std::nullopt);
  EXPECT_EQ(plain.value()(0, 0), train.value()(0, 0));
  EXPECT_EQ(plain_terms.bone, train_terms.bone);
}

TEST(Train, GeometricTermsAreComputedInMeters) {
  duet::Rng rng(12);
  auto skel = five_joint_skeleton();
  Mat a = random_flat(rng, skel, 4), b = random_flat(rng, skel, 4);
  Mat ah = random_flat(rng, skel, 4), bh = random_flat(rng, skel, 4);
  auto stats = toy_stats(rng);
  auto leaf = [](const Mat& m) { return ad::Var::leaf(m); };
  duet::LossWeights w;

  // Metric-space reference on the raw representations.
  auto [ref, ref_terms] =
      duet::total_loss(leaf(a), leaf(b), leaf(ah), leaf(bh), skel, w);
  (void)ref;
  // Same data passed normalized, with stats supplied for denormalization.
  auto norm = [&](const Mat& m) { return duet::normalize_rows(m, stats); };
  auto [out, out_terms] = duet::training_loss(
      leaf(norm(a)), leaf(norm(b)), leaf(norm(ah)), leaf(norm(bh)), skel, w,
      stats);
  (void)out;
  EXPECT_NEAR(out_terms.bone, ref_terms.bone, 1e-9);
  EXPECT_NEAR(out_terms.rel_orient, ref_terms.rel_orient, 1e-9);
  EXPECT_NEAR(out_terms.ada_interact, ref_terms.ada_interact, 1e-9);
  EXPECT_NEAR(out_terms.foot, ref_terms.foot, 1e-7);
  // Reconstruction stays in model space, so it differs from the metric one.
  EXPECT_GT(std::abs(out_terms.base - ref_terms.base), 1e-6);
}

// -- batch preparation --------------------------------------------------------

TEST(Train, PrepareBatchIsSeedDeterministic) {
  duet::Rng rng_a(7), rng_b(7), rng_c(8);
  auto schedule = duet::DiffusionSchedule::cosine(100);
  duet::Rng data_rng(1);
  auto batch = toy_batch(data_rng, 3, 4);
  auto p1 = duet::prepare_batch(batch, schedule, 0.5, rng_a);
  auto p2 = duet::prepare_batch(batch, schedule, 0.5, rng_b);
  auto p3 = duet::prepare_batch(batch, schedule, 0.5, rng_c);
  ASSERT_EQ(p1.size(), 3u);
  bool any_difference = false;
  for (size_t i = 0; i < p1.size(); ++i) {
    EXPECT_EQ(p1[i].t, p2[i].t);
    EXPECT_EQ(p1[i].drop_prompt, p2[i].drop_prompt);
    EXPECT_EQ((p1[i].noise1 - p2[i].noise1).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ((p1[i].noise2 - p2[i].noise2).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_GE(p1[i].t, 0);
    EXPECT_LT(p1[i].t, schedule.steps);
    any_difference = any_difference || p1[i].t != p3[i].t;
  }
  EXPECT_TRUE(any_difference);
}

TEST(Train, PromptDropProbabilityEndpoints) {
  duet::Rng data_rng(2);
  auto batch = toy_batch(data_rng, 4, 4);
  auto schedule = duet::DiffusionSchedule::cosine(100);
  duet::Rng rng(9);
  for (const auto& p : duet::prepare_batch(batch, schedule, 0.0, rng))
    EXPECT_FALSE(p.drop_prompt);
  for (const auto& p : duet::prepare_batch(batch, schedule, 1.0, rng))
    EXPECT_TRUE(p.drop_prompt);
}

// -- train step ---------------------------------------------------------------

TEST(Train, StepIsSeedDeterministic) {
  duet::Rng rng(21);
  auto params_a = toy_params(rng);
  duet::Rng rng2(21);
  auto params_b = toy_params(rng2);
  duet::Rng data_rng(3);
  auto batch = toy_batch(data_rng, 2, 4);
  auto schedule = duet::DiffusionSchedule::cosine(100);
  duet::TrainConfig cfg;

  duet::Rng step_a(5), step_b(5);
  auto skel = five_joint_skeleton();
  auto s1 = duet::train_step(batch, params_a, schedule, skel, cfg, step_a);
  auto s2 = duet::train_step(batch, params_b, schedule, skel, cfg, step_b);
  EXPECT_EQ(s1.terms.total, s2.terms.total);
  EXPECT_EQ(s1.terms.ada_interact, s2.terms.ada_interact);
  for (const auto& name : params_a.store.names) {
    const Mat& g1 = params_a.store.at(name).grad();
    const Mat& g2 = params_b.store.at(name).grad();
    ASSERT_EQ(g1.size(), g2.size()) << name;
    if (g1.size())
      EXPECT_EQ((g1 - g2).cwiseAbs().maxCoeff(), 0.0) << name;
  }
}

TEST(Train, ReactionModeIgnoresAgentOneNoise) {
  duet::Rng rng(22);
  auto params = toy_params(rng, 1);
  duet::Rng data_rng(4);
  auto batch = toy_batch(data_rng, 1, 4);
  auto schedule = duet::DiffusionSchedule::cosine(100);
  auto skel = five_joint_skeleton();

  duet::Rng prep_rng(6);
  auto prepared = duet::prepare_batch(batch, schedule, 0.0, prep_rng);
  auto perturbed = prepared;
  perturbed[0].noise1 = prepared[0].noise1.array() + 5.0;

  duet::TrainConfig reaction;
  reaction.mode = duet::TrainMode::reaction;
  auto [l1, s1] =
      duet::batch_loss(batch, prepared, params, schedule, skel, reaction);
  auto [l2, s2] =
      duet::batch_loss(batch, perturbed, params, schedule, skel, reaction);
  EXPECT_EQ(l1.value()(0, 0), l2.value()(0, 0));

  duet::TrainConfig duet_mode;
  auto [l3, s3] =
      duet::batch_loss(batch, prepared, params, schedule, skel, duet_mode);
  auto [l4, s4] =
      duet::batch_loss(batch, perturbed, params, schedule, skel, duet_mode);
  EXPECT_NE(l3.value()(0, 0), l4.value()(0, 0));
}

TEST(Train, ReactionModeKeepsAgentOneReconstructionAtZero) {
  duet::Rng rng(23);
  auto params = toy_params(rng, 1);
  duet::Rng data_rng(5);
  auto batch = toy_batch(data_rng, 1, 4);
  auto schedule = duet::DiffusionSchedule::cosine(100);
  auto skel = five_joint_skeleton();
  duet::Rng prep_rng(7);
  auto prepared = duet::prepare_batch(batch, schedule, 0.0, prep_rng);

  duet::TrainConfig reaction;
  reaction.mode = duet::TrainMode::reaction;
  reaction.loss_weights.vel = 0;
  reaction.loss_weights.foot = 0;
  reaction.loss_weights.bone = 0;
  reaction.loss_weights.rel_orient = 0;
  reaction.loss_weights.ada_interact = 0;
  auto [loss, stats] =
      duet::batch_loss(batch, prepared, params, schedule, skel, reaction);

  // Base reduces to agent 2 alone: recompute it directly.
  Mat x2_t = duet::q_sample(batch[0].x2, prepared[0].t, prepared[0].noise2,
                            schedule);
  auto [xh1, xh2] = duet::denoise(batch[0].x1, x2_t, prepared[0].t,
                                  batch[0].prompt, params);
  double agent2_mse = (xh2 - batch[0].x2).array().square().mean();
  EXPECT_NEAR(stats.terms.base, 0.5 * agent2_mse, 1e-12);
}

TEST(Train, NonFiniteLossThrows) {
  duet::Rng rng(24);
  auto params = toy_params(rng, 1);
  params.store.at("out_proj.w").mutable_value()(0, 0) =
      std::numeric_limits<double>::quiet_NaN();
  duet::Rng data_rng(6);
  auto batch = toy_batch(data_rng, 1, 4);
  auto schedule = duet::DiffusionSchedule::cosine(100);
  auto skel = five_joint_skeleton();
  duet::TrainConfig cfg;
  duet::Rng step_rng(8);
  EXPECT_THROW(
      duet::train_step(batch, params, schedule, skel, cfg, step_rng),
      duet::NonFiniteLoss);
}

TEST(Train, BatchLossGradientsMatchFiniteDifferences) {
  duet::Rng rng(25);
  auto params = toy_params(rng);  // width 8, two block pairs
  duet::Rng data_rng(7);
  auto batch = toy_batch(data_rng, 2, 4);
  batch[0].frame_mask = {1, 1, 1, 0};
  auto schedule = duet::DiffusionSchedule::cosine(100);
  auto skel = five_joint_skeleton();
  duet::Rng prep_rng(9);
  auto prepared = duet::prepare_batch(batch, schedule, 0.0, prep_rng);
  prepared[1].drop_prompt = true;  // exercise the null-prompt branch

  duet::TrainConfig cfg;
  duet::Rng stats_rng(10);
  cfg.stats = toy_stats(stats_rng);

  params.store.zero_grads();
  auto [loss, stats] =
      duet::batch_loss(batch, prepared, params, schedule, skel, cfg);
  ad::backward(loss);

  auto eval = [&]() {
    ad::NoGradGuard guard;
    return duet::batch_loss(batch, prepared, params, schedule, skel, cfg)
        .first.value()(0, 0);
  };

  // Spot-check a few entries of every tensor against central differences.
  duet::Rng pick_rng(11);
  const double h = 1e-5;
  double worst = 0.0;
  for (const auto& name : params.store.names) {
    ad::Var& p = params.store.at(name);
    Mat analytic =
        p.grad().size() ? p.grad() : Mat::Zero(p.rows(), p.cols());
    std::uniform_int_distribution<long> pr(0, p.rows() - 1), pc(0, p.cols() - 1);
    for (int probe = 0; probe < 3; ++probe) {
      long i = pr(pick_rng), j = pc(pick_rng);
      double saved = p.mutable_value()(i, j);
      p.mutable_value()(i, j) = saved + h;
      double up = eval();
      p.mutable_value()(i, j) = saved - h;
      double down = eval();
      p.mutable_value()(i, j) = saved;
      double numeric = (up - down) / (2 * h);
      double denom =
          std::max({1.0, std::abs(numeric), std::abs(analytic(i, j))});
      worst = std::max(worst, std::abs(numeric - analytic(i, j)) / denom);
    }
  }
  EXPECT_LE(worst, 1e-3);
}

TEST(Train, ShortRunReducesLoss) {
  duet::Rng rng(26);
  auto params = toy_params(rng, 1);
  duet::Rng data_rng(8);
  auto batch = toy_batch(data_rng, 1, 4);
  auto schedule = duet::DiffusionSchedule::cosine(100);
  auto skel = five_joint_skeleton();

  duet::TrainConfig cfg;
  cfg.p_uncond = 0.0;
  duet::OptimizerConfig opt_cfg;
  opt_cfg.lr = 2e-3;
  opt_cfg.weight_decay = 0.0;
  opt_cfg.warmup_steps = 5;
  opt_cfg.total_steps = 80;
  duet::AdamW opt(params.store, opt_cfg);

  duet::Rng step_rng(12);
  double first5 = 0, last5 = 0;
  for (int step = 0; step < 80; ++step) {
    auto stats = duet::train_step(batch, params, schedule, skel, cfg, step_rng);
    if (step < 5) first5 += stats.terms.total;
    if (step >= 75) last5 += stats.terms.total;
    opt.step();
  }
  EXPECT_LT(last5, 0.7 * first5);
}
