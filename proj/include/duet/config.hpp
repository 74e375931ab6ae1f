#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "duet/denoiser.hpp"
#include "duet/errors.hpp"
#include "duet/evaluator.hpp"
#include "duet/filtering.hpp"
#include "duet/losses.hpp"
#include "duet/optimizer.hpp"
#include "duet/sampler.hpp"

namespace duet {

/// Theme/tag combinations and styling examples for description synthesis.
struct TaxonomyEntry {
  std::string theme;
  std::vector<std::string> tags;
};

struct Taxonomy {
  std::vector<TaxonomyEntry> themes;
  std::vector<std::string> examples;

  void validate() const {
    require<BadArgument>(!themes.empty(), "taxonomy needs at least one theme");
    require<BadArgument>(!examples.empty(),
                         "taxonomy needs at least one styling example");
    for (const auto& t : themes)
      require<BadArgument>(!t.theme.empty(), "theme names must be non-empty");
  }
};

inline Taxonomy default_taxonomy() {
  Taxonomy t;
  t.themes = {{"greeting", {"warm", "energetic"}},
              {"confrontation", {"tense", "physical"}},
              {"dance", {"playful", "synchronized"}}};
  t.examples = {
      "two people walk toward each other briskly across a short gap and stop "
      "face to face",
      "one person gently pushes the other, who stumbles back a single step",
      "the pair circles clockwise in a tight ring at a gentle pace"};
  return t;
}

/// Every tunable the tools expose, with JSON overrides on top of the
/// compiled defaults. Absent keys keep their defaults.
struct RunConfig {
  ModelConfig model;
  EvaluatorConfig evaluator;
  SamplerConfig sampler;
  OptimizerConfig optimizer;
  LossWeights loss_weights;
  FilterConfig filter;
  Taxonomy taxonomy = default_taxonomy();
  double p_uncond = 0.1;
  int batch_size = 16;
  int train_steps = 2000;  // desk-scale default; raise by flag for real runs
  std::uint64_t seed = 0;

  void validate() const {
    model.validate();
    evaluator.validate();
    sampler.validate();
    optimizer.validate();
    loss_weights.validate();
    filter.validate();
    taxonomy.validate();
    require<BadArgument>(p_uncond >= 0.0 && p_uncond <= 1.0,
                         "p_uncond must lie in [0, 1]");
    require<BadArgument>(batch_size >= 1 && train_steps >= 1,
                         "batch size and step count must be positive");
  }
};

namespace detail {

template <class T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void merge(const nlohmann::json& j, ModelConfig& cfg) {
  get_if(j, "block_pairs", cfg.block_pairs);
  get_if(j, "model_width", cfg.model_width);
  get_if(j, "head_count", cfg.head_count);
  get_if(j, "text_width", cfg.text_width);
  get_if(j, "channel_width", cfg.channel_width);
  get_if(j, "max_frames", cfg.max_frames);
  get_if(j, "diffusion_steps", cfg.diffusion_steps);
  if (j.contains("update_scheme"))
    cfg.update_scheme = scheme_from_string(j.at("update_scheme").get<std::string>());
}

inline void merge(const nlohmann::json& j, EvaluatorConfig& cfg) {
  get_if(j, "channel_width", cfg.channel_width);
  get_if(j, "model_width", cfg.model_width);
  get_if(j, "head_count", cfg.head_count);
  get_if(j, "block_count", cfg.block_count);
  get_if(j, "text_width", cfg.text_width);
  get_if(j, "embed_dim", cfg.embed_dim);
  get_if(j, "max_frames", cfg.max_frames);
}

inline void merge(const nlohmann::json& j, SamplerConfig& cfg) {
  get_if(j, "ddim_steps", cfg.ddim_steps);
  get_if(j, "guidance_weight", cfg.guidance_weight);
  get_if(j, "eta", cfg.eta);
  get_if(j, "clamp_x0", cfg.clamp_x0);
  get_if(j, "seed", cfg.seed);
}

inline void merge(const nlohmann::json& j, OptimizerConfig& cfg) {
  get_if(j, "lr", cfg.lr);
  get_if(j, "beta1", cfg.beta1);
  get_if(j, "beta2", cfg.beta2);
  get_if(j, "eps", cfg.eps);
  get_if(j, "weight_decay", cfg.weight_decay);
  get_if(j, "warmup_steps", cfg.warmup_steps);
  get_if(j, "total_steps", cfg.total_steps);
}

inline void merge(const nlohmann::json& j, LossWeights& w) {
  get_if(j, "base", w.base);
  get_if(j, "vel", w.vel);
  get_if(j, "foot", w.foot);
  get_if(j, "bone", w.bone);
  get_if(j, "rel_orient", w.rel_orient);
  get_if(j, "ada_interact", w.ada_interact);
  get_if(j, "epsilon", w.epsilon);
}

inline void merge(const nlohmann::json& j, FilterConfig& cfg) {
  get_if(j, "cosine_threshold", cfg.cosine_threshold);
  get_if(j, "k_neighbors", cfg.k_neighbors);
  get_if(j, "r_min", cfg.r_min);
  get_if(j, "r_max", cfg.r_max);
}

inline void merge(const nlohmann::json& j, Taxonomy& tax) {
  if (j.contains("themes")) {
    tax.themes.clear();
    for (const auto& t : j.at("themes"))
      tax.themes.push_back({t.at("theme").get<std::string>(),
                            t.value("tags", std::vector<std::string>{})});
  }
  get_if(j, "examples", tax.examples);
}

}  // namespace detail

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig cfg;
  if (j.contains("model")) detail::merge(j.at("model"), cfg.model);
  if (j.contains("evaluator")) detail::merge(j.at("evaluator"), cfg.evaluator);
  if (j.contains("sampler")) detail::merge(j.at("sampler"), cfg.sampler);
  if (j.contains("optimizer")) detail::merge(j.at("optimizer"), cfg.optimizer);
  if (j.contains("loss_weights"))
    detail::merge(j.at("loss_weights"), cfg.loss_weights);
  if (j.contains("filter")) detail::merge(j.at("filter"), cfg.filter);
  if (j.contains("taxonomy")) detail::merge(j.at("taxonomy"), cfg.taxonomy);
  detail::get_if(j, "p_uncond", cfg.p_uncond);
  detail::get_if(j, "batch_size", cfg.batch_size);
  detail::get_if(j, "train_steps", cfg.train_steps);
  detail::get_if(j, "seed", cfg.seed);
  cfg.validate();
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  require<IoError>(bool(in), "cannot open config: " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  require<CorruptFile>(!j.is_discarded(), "config is not JSON: " + path);
  return run_config_from_json(j);
}

}  // namespace duet
