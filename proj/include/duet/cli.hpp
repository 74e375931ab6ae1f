#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "duet/bank_io.hpp"
#include "duet/checkpoint.hpp"
#include "duet/compose.hpp"
#include "duet/config.hpp"
#include "duet/dataset.hpp"
#include "duet/evaluator.hpp"
#include "duet/filtering.hpp"
#include "duet/metrics.hpp"
#include "duet/motion_io.hpp"
#include "duet/motion_source.hpp"
#include "duet/sampler.hpp"
#include "duet/train.hpp"

namespace duet {
namespace cli {

/// Line-delimited JSON run log, mirrored to stdout and optionally to a
/// file so runs stay machine-readable.
class Report {
 public:
  explicit Report(std::string path = {}, bool echo = true)
      : path_(std::move(path)), echo_(echo) {
    start_ = std::chrono::steady_clock::now();
  }

  void add(nlohmann::json line) {
    line["elapsed_s"] = seconds();
    const std::string text = line.dump();
    if (echo_) std::cout << text << "\n";
    if (!path_.empty()) {
      std::ofstream out(path_, std::ios::app);
      require<IoError>(bool(out), "cannot append run report: " + path_);
      out << text << "\n";
    }
    lines_.push_back(std::move(line));
  }

  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start_)
        .count();
  }

  const std::vector<nlohmann::json>& lines() const { return lines_; }

 private:
  std::string path_;
  bool echo_;
  std::vector<nlohmann::json> lines_;
  std::chrono::steady_clock::time_point start_;
};

inline TokenizedPrompt caption_prompt(const std::string& caption,
                                      int text_width) {
  return embed_words(tokenize(caption), StubWordEmbedder(text_width));
}

/// Collates one manifest split into normalized training items.
inline std::vector<TrainItem> build_train_items(const DatasetManifest& manifest,
                                                const std::string& split,
                                                int text_width) {
  manifest.stats.validate();
  std::vector<TrainItem> items;
  for (const auto& sample : load_split(manifest, split)) {
    TrainItem item;
    item.x1 = normalize_rows(build_representation(sample.agents[0]),
                             manifest.stats);
    item.x2 = normalize_rows(build_representation(sample.agents[1]),
                             manifest.stats);
    item.prompt = caption_prompt(sample.captions[0], text_width);
    items.push_back(std::move(item));
  }
  require<DatasetTooSmall>(!items.empty(), "split '" + split + "' is empty");
  return items;
}

struct TrainRun {
  DenoiserParameters params;
  std::vector<double> losses;  // per reported step
};

struct TrainDenoiserArgs {
  TrainMode mode = TrainMode::duet;
  int steps = 2000;
  int batch_size = 16;
  double p_uncond = 0.1;
  std::uint64_t seed = 0;
  int report_every = 100;
  int warmup_steps = -1;        // <0 keeps the optimizer default
  std::string init_checkpoint;  // resume / fine-tune when non-empty
};

/// Shared trainer for the interaction and reaction commands.
inline TrainRun train_denoiser_on_manifest(const DatasetManifest& manifest,
                                           const RunConfig& run,
                                           const TrainDenoiserArgs& args,
                                           Report& report) {
  Rng rng(args.seed);
  DenoiserParameters params;
  if (args.init_checkpoint.empty()) {
    ModelConfig model = run.model;
    model.channel_width = channels_per_frame(manifest.joint_count);
    params = DenoiserParameters::init(model, rng);
  } else {
    params = load_denoiser(args.init_checkpoint);
  }

  TrainRun out{std::move(params), {}};
  auto items =
      build_train_items(manifest, "train", out.params.config.text_width);
  DiffusionSchedule schedule =
      DiffusionSchedule::cosine(out.params.config.diffusion_steps);
  const Skeleton skeleton = toy_skeleton();

  TrainConfig cfg;
  cfg.mode = args.mode;
  cfg.p_uncond = args.p_uncond;
  cfg.loss_weights = run.loss_weights;
  cfg.stats = manifest.stats;

  OptimizerConfig opt_cfg = run.optimizer;
  opt_cfg.total_steps = args.steps;
  if (args.warmup_steps >= 0) opt_cfg.warmup_steps = args.warmup_steps;
  AdamW opt(out.params.store, opt_cfg);
  // Sampling with replacement, so batches larger than the corpus draw
  // several independent noisings of the same item.
  std::uniform_int_distribution<size_t> pick(0, items.size() - 1);
  const int B = args.batch_size;
  for (int step = 0; step < args.steps; ++step) {
    std::vector<TrainItem> batch;
    for (int b = 0; b < B; ++b) batch.push_back(items[pick(rng)]);
    StepStats stats =
        train_step(batch, out.params, schedule, skeleton, cfg, rng);
    opt.step();
    if (step % args.report_every == 0 || step + 1 == args.steps) {
      out.losses.push_back(stats.terms.total);
      report.add({{"event", "train_step"},
                  {"mode", to_string(args.mode)},
                  {"step", step},
                  {"loss", stats.terms.total},
                  {"base", stats.terms.base},
                  {"vel", stats.terms.vel},
                  {"foot", stats.terms.foot},
                  {"bone", stats.terms.bone},
                  {"rel_orient", stats.terms.rel_orient},
                  {"ada_interact", stats.terms.ada_interact}});
    }
  }
  return out;
}

inline int cmd_toy_data(const std::string& out_dir, int n, std::uint64_t seed,
                        const ToyDataConfig& cfg, Report& report) {
  DatasetManifest manifest = generate_toy_dataset(out_dir, n, seed, cfg);
  report.add({{"event", "toy_data"},
              {"out", out_dir},
              {"samples", n},
              {"train", manifest.entries_for("train").size()},
              {"test", manifest.entries_for("test").size()},
              {"heldout", manifest.entries_for("heldout").size()}});
  return 0;
}

inline int cmd_train_denoiser(const std::string& data_dir,
                              const std::string& out_ckpt, const RunConfig& run,
                              const TrainDenoiserArgs& args, Report& report) {
  DatasetManifest manifest = load_manifest(data_dir + "/manifest.json");
  TrainRun result = train_denoiser_on_manifest(manifest, run, args, report);
  save_denoiser(out_ckpt, result.params);
  report.add({{"event", "train_done"},
              {"mode", to_string(args.mode)},
              {"checkpoint", out_ckpt},
              {"steps", args.steps},
              {"final_loss", result.losses.back()}});
  return 0;
}

inline int cmd_train_evaluator(const std::string& data_dir,
                               const std::string& out_ckpt,
                               const std::string& bank_out,
                               const RunConfig& run, int epochs,
                               std::uint64_t seed, Report& report) {
  DatasetManifest manifest = load_manifest(data_dir + "/manifest.json");
  EvaluatorConfig cfg = run.evaluator;
  cfg.channel_width = channels_per_frame(manifest.joint_count);

  std::vector<EvalItem> items;
  for (const auto& sample : load_split(manifest, "train"))
    items.push_back(make_eval_item(
        sample, caption_prompt(sample.captions[0], cfg.text_width)));

  EvaluatorTrainConfig train_cfg;
  train_cfg.epochs = epochs;
  train_cfg.batch_size = run.batch_size;
  Rng rng(seed);
  TrainedEvaluator trained = train_evaluator(items, cfg, train_cfg, rng);
  for (size_t e = 0; e < trained.epoch_losses.size(); ++e)
    report.add({{"event", "evaluator_epoch"},
                {"epoch", e},
                {"loss", trained.epoch_losses[e]}});
  save_evaluator(out_ckpt, trained.params);

  if (!bank_out.empty()) {
    auto heldout = load_split(manifest, "heldout");
    Mat bank(heldout.size(), cfg.embed_dim);
    for (size_t i = 0; i < heldout.size(); ++i)
      bank.row(i) = encode_motion(heldout[i], trained.params);
    write_bank(bank_out, bank);
    report.add({{"event", "bank_written"},
                {"path", bank_out},
                {"rows", heldout.size()}});
  }
  report.add({{"event", "train_evaluator_done"},
              {"checkpoint", out_ckpt},
              {"final_loss", trained.epoch_losses.back()}});
  return 0;
}

inline int cmd_sample(const std::string& ckpt, const std::string& data_dir,
                      const std::string& caption, int frames,
                      const SamplerConfig& sampler, const std::string& out_path,
                      Report& report) {
  DenoiserParameters params = load_denoiser(ckpt);
  DatasetManifest manifest = load_manifest(data_dir + "/manifest.json");
  DiffusionSchedule schedule =
      DiffusionSchedule::cosine(params.config.diffusion_steps);
  auto prompt = caption_prompt(caption, params.config.text_width);
  InteractionSample sample =
      ddim_sample(params, prompt, caption, frames, sampler, schedule,
                  manifest.stats, manifest.fps);
  save_motion(out_path, sample);
  save_captions(out_path + ".txt", sample.captions);
  report.add({{"event", "sample"},
              {"caption", caption},
              {"frames", frames},
              {"seed", sampler.seed},
              {"out", out_path}});
  return 0;
}

struct ComposeArgs {
  std::string fixtures;  // JSONL exchange log
  bool offline = true;   // replay fixtures instead of calling an endpoint
  int per_theme = 2;     // descriptions requested per theme
  std::uint64_t seed = 0;
};

inline std::unique_ptr<LlmClient> make_llm_client(const ComposeArgs& args) {
  if (args.offline) {
    require<BadArgument>(!args.fixtures.empty(),
                         "--offline needs --fixtures <path>");
    return std::make_unique<FixtureLlmClient>(args.fixtures);
  }
  auto live = std::make_unique<HttpLlmClient>(HttpLlmConfig::from_env());
  if (args.fixtures.empty()) return live;
  return std::make_unique<RecordingLlmClient>(std::move(live), args.fixtures);
}

/// Fits the caption-words -> frames line on the train split.
inline LengthEstimator fit_length_from_manifest(const DatasetManifest& manifest,
                                                int max_frames) {
  std::vector<std::pair<int, int>> pairs;
  for (const auto& sample : load_split(manifest, "train")) {
    const int words = tokenize(sample.captions[0]).valid_count() - 2;
    pairs.push_back({words, sample.frames()});
  }
  return fit_length_estimator(pairs, 16, max_frames);
}

inline int cmd_compose(const std::string& reaction_ckpt,
                       const std::string& data_dir, const std::string& out_dir,
                       const RunConfig& run, const ComposeArgs& args,
                       Report& report) {
  DenoiserParameters reaction = load_denoiser(reaction_ckpt);
  DatasetManifest source = load_manifest(data_dir + "/manifest.json");
  auto llm = make_llm_client(args);

  ProceduralMotionSource stub(toy_skeleton(), source.fps);
  DiffusionSchedule schedule =
      DiffusionSchedule::cosine(reaction.config.diffusion_steps);
  SamplerConfig sampler = run.sampler;
  ComposeContext ctx{stub,
                     reaction,
                     schedule,
                     sampler,
                     source.stats,
                     fit_length_from_manifest(
                         source, std::min(128, reaction.config.max_frames)),
                     source.fps};

  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "motions");
  fs::create_directories(fs::path(out_dir) / "captions");
  DatasetManifest out_manifest;
  out_manifest.fps = source.fps;
  out_manifest.joint_count = source.joint_count;
  out_manifest.stats = source.stats;
  out_manifest.root = out_dir;

  int index = 0;
  for (const auto& theme : run.taxonomy.themes) {
    auto descriptions =
        synthesize_descriptions(*llm, theme.theme, theme.tags,
                                run.taxonomy.examples, args.per_theme);
    for (const auto& text : descriptions) {
      PromptBundle bundle =
          decompose_description(*llm, theme.theme, theme.tags, text);
      for (const auto& warning : budget_warnings(bundle))
        report.add({{"event", "budget_warning"}, {"detail", warning}});

      ctx.sampler.seed = args.seed * 0x9e3779b97f4a7c15ULL + index;
      InteractionSample sample = compose_interaction(bundle, ctx);
      sample.captions = {bundle.two_person_text, bundle.person1_text,
                         bundle.person2_text};

      char name[32];
      std::snprintf(name, sizeof name, "compose_%04d", index);
      ManifestEntry entry;
      entry.motion_path = std::string("motions/") + name + ".t2imot";
      entry.caption_path = std::string("captions/") + name + ".txt";
      entry.split = "train";
      entry.provenance = "synthetic_raw";
      save_motion(out_manifest.resolve(entry.motion_path), sample);
      save_captions(out_manifest.resolve(entry.caption_path), sample.captions);
      out_manifest.entries.push_back(entry);

      report.add({{"event", "composed"},
                  {"index", index},
                  {"theme", theme.theme},
                  {"caption", bundle.two_person_text},
                  {"frames", sample.frames()}});
      ++index;
    }
  }
  save_manifest((fs::path(out_dir) / "manifest.json").string(), out_manifest);
  report.add({{"event", "compose_done"},
              {"out", out_dir},
              {"samples", index}});
  return 0;
}

inline int cmd_filter(const std::string& in_dir,
                      const std::string& evaluator_ckpt,
                      const std::string& bank_path, const FilterConfig& cfg,
                      AnnulusMode mode, const std::string& out_manifest_path,
                      Report& report) {
  DatasetManifest manifest = load_manifest(in_dir + "/manifest.json");
  EvaluatorParameters evaluator = load_evaluator(evaluator_ckpt);
  Mat bank = read_bank(bank_path);

  std::vector<InteractionSample> samples;
  for (const auto& entry : manifest.entries)
    samples.push_back(load_entry(manifest, entry));

  FilterOutcome outcome = filter_pipeline(samples, evaluator, bank, cfg, mode);

  DatasetManifest filtered = manifest;
  filtered.entries.clear();
  for (int i : outcome.kept_indices) {
    ManifestEntry entry = manifest.entries[i];
    entry.provenance = "synthetic_filtered";
    filtered.entries.push_back(std::move(entry));
  }
  save_manifest(out_manifest_path, filtered);

  int semantic = 0, annulus = 0;
  for (size_t i = 0; i < samples.size(); ++i) {
    semantic += outcome.semantic_pass[i];
    annulus += outcome.annulus_pass[i];
  }
  report.add({{"event", "filter_done"},
              {"total", samples.size()},
              {"semantic_pass", semantic},
              {"annulus_pass", annulus},
              {"kept", outcome.kept_indices.size()},
              {"out", out_manifest_path}});
  return 0;
}

struct EvaluateArgs {
  int reps = 3;  // generations per test caption (multimodality needs >= 2)
  int diversity_pairs = 100;
  int multimodality_pairs = 20;
  std::uint64_t seed = 0;
};

inline int cmd_evaluate(const std::string& gen_ckpt,
                        const std::string& evaluator_ckpt,
                        const std::string& data_dir, const RunConfig& run,
                        const EvaluateArgs& args, Report& report) {
  require<BadArgument>(args.reps >= 2, "need at least 2 generations per prompt");
  DenoiserParameters gen = load_denoiser(gen_ckpt);
  EvaluatorParameters evaluator = load_evaluator(evaluator_ckpt);
  DatasetManifest manifest = load_manifest(data_dir + "/manifest.json");
  DiffusionSchedule schedule =
      DiffusionSchedule::cosine(gen.config.diffusion_steps);

  auto test = load_split(manifest, "test");
  const long B = long(test.size());
  require<DatasetTooSmall>(B >= 2, "test split needs at least 2 samples");

  Mat real_embs(B, evaluator.config.embed_dim);
  Mat text_embs(B, evaluator.config.embed_dim);
  Mat matched_embs(B, evaluator.config.embed_dim);
  Mat all_embs(B * args.reps, evaluator.config.embed_dim);
  std::vector<Mat> per_prompt;

  for (long i = 0; i < B; ++i) {
    const std::string& caption = test[i].captions[0];
    real_embs.row(i) = encode_motion(test[i], evaluator);
    text_embs.row(i) = encode_text_vector(
        caption_prompt(caption, evaluator.config.text_width), evaluator);

    Mat group(args.reps, evaluator.config.embed_dim);
    for (int r = 0; r < args.reps; ++r) {
      SamplerConfig sampler = run.sampler;
      sampler.seed = args.seed + std::uint64_t(i) * args.reps + r;
      InteractionSample generated = ddim_sample(
          gen, caption_prompt(caption, gen.config.text_width), caption,
          test[i].frames(), sampler, schedule, manifest.stats, manifest.fps);
      group.row(r) = encode_motion(generated, evaluator);
    }
    matched_embs.row(i) = group.row(0);
    all_embs.middleRows(i * args.reps, args.reps) = group;
    per_prompt.push_back(group);
  }

  Rng metric_rng(args.seed ^ 0xda3e39cb94b95bdbULL);
  const int pool = int(std::min<long>(32, B));
  nlohmann::json line = {{"event", "evaluate"},
                         {"test_samples", B},
                         {"reps", args.reps},
                         {"fid", fid(real_embs, all_embs)},
                         {"mm_dist", mm_dist(text_embs, matched_embs)},
                         {"diversity",
                          diversity(all_embs, args.diversity_pairs, metric_rng)},
                         {"multimodality",
                          multimodality(per_prompt, args.multimodality_pairs,
                                        metric_rng)}};
  if (pool >= 2) {
    RPrecisionRates rates =
        r_precision(text_embs, matched_embs, pool, metric_rng);
    line["r_precision_top1"] = rates.top1;
    line["r_precision_top2"] = rates.top2;
    line["r_precision_top3"] = rates.top3;
    line["r_precision_pool"] = pool;
  }
  report.add(line);
  return 0;
}

inline int cmd_export_embeddings(const std::string& evaluator_ckpt,
                                 const std::string& data_dir,
                                 const std::string& split,
                                 const std::string& out_path, Report& report) {
  EvaluatorParameters evaluator = load_evaluator(evaluator_ckpt);
  DatasetManifest manifest = load_manifest(data_dir + "/manifest.json");
  auto samples = load_split(manifest, split);
  require<DatasetTooSmall>(!samples.empty(), "split '" + split + "' is empty");
  Mat bank(samples.size(), evaluator.config.embed_dim);
  for (size_t i = 0; i < samples.size(); ++i)
    bank.row(i) = encode_motion(samples[i], evaluator);
  write_bank(out_path, bank);
  report.add({{"event", "export_embeddings"},
              {"split", split},
              {"rows", samples.size()},
              {"out", out_path}});
  return 0;
}

}  // namespace cli
}  // namespace duet
