#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "duet/config.hpp"

namespace duet {
namespace {

TEST(RunConfig, DefaultsAreTheDeployedConstants) {
  RunConfig cfg;
  cfg.validate();
  EXPECT_EQ(cfg.model.block_pairs, 12);
  EXPECT_EQ(cfg.model.diffusion_steps, 1000);
  EXPECT_EQ(cfg.sampler.ddim_steps, 50);
  EXPECT_EQ(cfg.sampler.guidance_weight, 3.5);
  EXPECT_EQ(cfg.optimizer.lr, 5e-5);
  EXPECT_EQ(cfg.filter.cosine_threshold, 0.58);
  EXPECT_EQ(cfg.filter.k_neighbors, 20);
  EXPECT_EQ(cfg.p_uncond, 0.1);
  EXPECT_EQ(cfg.evaluator.embed_dim, 512);
}

TEST(RunConfig, PartialOverridesMergeOntoDefaults) {
  nlohmann::json j = {
      {"model",
       {{"block_pairs", 2}, {"update_scheme", "alternating"}}},
      {"sampler", {{"guidance_weight", 2.0}}},
      {"filter", {{"r_min", 0.25}}},
      {"taxonomy",
       {{"themes", {{{"theme", "sparring"}, {"tags", {"sharp"}}}}},
        {"examples", {"one person feints, the other slips aside"}}}},
      {"p_uncond", 0.2},
      {"seed", 9}};
  RunConfig cfg = run_config_from_json(j);
  EXPECT_EQ(cfg.model.block_pairs, 2);
  EXPECT_EQ(cfg.model.update_scheme, ModelConfig::Scheme::alternating);
  EXPECT_EQ(cfg.model.model_width, 256);  // untouched default
  EXPECT_EQ(cfg.sampler.guidance_weight, 2.0);
  EXPECT_EQ(cfg.sampler.ddim_steps, 50);
  EXPECT_EQ(cfg.filter.r_min, 0.25);
  EXPECT_EQ(cfg.filter.r_max, 0.6);
  ASSERT_EQ(cfg.taxonomy.themes.size(), 1u);
  EXPECT_EQ(cfg.taxonomy.themes[0].theme, "sparring");
  EXPECT_EQ(cfg.p_uncond, 0.2);
  EXPECT_EQ(cfg.seed, 9u);
}

TEST(RunConfig, LoadsFromDiskAndRejectsBadInput) {
  auto dir = std::filesystem::temp_directory_path() / "duet_config";
  std::filesystem::create_directories(dir);
  auto path = (dir / "run.json").string();
  std::ofstream(path) << R"({"batch_size": 4, "train_steps": 50})";
  RunConfig cfg = load_run_config(path);
  EXPECT_EQ(cfg.batch_size, 4);
  EXPECT_EQ(cfg.train_steps, 50);

  std::ofstream(path) << "not json";
  EXPECT_THROW(load_run_config(path), CorruptFile);
  EXPECT_THROW(load_run_config((dir / "missing.json").string()), IoError);

  EXPECT_THROW(run_config_from_json({{"p_uncond", 1.5}}), BadArgument);
  EXPECT_THROW(run_config_from_json({{"model", {{"update_scheme", "x"}}}}),
               BadArgument);
  EXPECT_THROW(run_config_from_json({{"batch_size", 0}}), BadArgument);
}

}  // namespace
}  // namespace duet
