#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "duet/cli.hpp"

namespace {

duet::RunConfig load_config_or_default(const std::string& path) {
  return path.empty() ? duet::RunConfig{} : duet::load_run_config(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-person text-to-motion workbench"};
  app.require_subcommand(1);

  std::string config_path, report_path;
  app.add_option("--config", config_path, "run configuration JSON");
  app.add_option("--report", report_path, "append the JSONL run report here");

  // toy-data
  auto* toy = app.add_subcommand("toy-data", "generate a procedural corpus");
  std::string toy_out;
  int toy_n = 64;
  std::uint64_t toy_seed = 0;
  duet::ToyDataConfig toy_cfg;
  toy->add_option("--out", toy_out, "output directory")->required();
  toy->add_option("--n", toy_n, "sample count (>= 8)");
  toy->add_option("--seed", toy_seed, "generator seed");
  toy->add_option("--fps", toy_cfg.fps, "frames per second");
  toy->add_option("--min-frames", toy_cfg.min_frames, "shortest sequence");
  toy->add_option("--max-frames", toy_cfg.max_frames, "longest sequence");
  toy->add_option("--jitter", toy_cfg.position_jitter, "XZ placement jitter");

  // train-interactor / train-reaction share flags
  struct TrainFlags {
    std::string data, out, init, scheme;
    duet::cli::TrainDenoiserArgs args;
    double lr = -1.0;
  };
  auto add_train_flags = [](CLI::App* cmd, TrainFlags& f) {
    cmd->add_option("--data", f.data, "dataset directory")->required();
    cmd->add_option("--out", f.out, "checkpoint to write")->required();
    cmd->add_option("--init", f.init, "checkpoint to continue from");
    cmd->add_option("--steps", f.args.steps, "optimization steps");
    cmd->add_option("--batch-size", f.args.batch_size, "items per step");
    cmd->add_option("--seed", f.args.seed, "training seed");
    cmd->add_option("--p-uncond", f.args.p_uncond,
                    "prompt-drop probability for guidance training");
    cmd->add_option("--scheme", f.scheme,
                    "agent update scheme: parallel | alternating");
    cmd->add_option("--lr", f.lr, "learning rate override");
    cmd->add_option("--warmup", f.args.warmup_steps,
                    "linear warmup steps (default from optimizer config)");
    cmd->add_option("--report-every", f.args.report_every,
                    "steps between report lines");
  };
  TrainFlags duet_flags, reaction_flags;
  auto* train_duet =
      app.add_subcommand("train-interactor", "train the two-person denoiser");
  add_train_flags(train_duet, duet_flags);
  auto* train_reaction = app.add_subcommand(
      "train-reaction", "train the reaction model (agent 1 stays clean)");
  add_train_flags(train_reaction, reaction_flags);
  reaction_flags.args.mode = duet::TrainMode::reaction;

  // train-evaluator
  auto* train_eval =
      app.add_subcommand("train-evaluator", "train the contrastive evaluator");
  std::string eval_data, eval_out, eval_bank;
  int eval_epochs = 8;
  std::uint64_t eval_seed = 0;
  train_eval->add_option("--data", eval_data, "dataset directory")->required();
  train_eval->add_option("--out", eval_out, "checkpoint to write")->required();
  train_eval->add_option("--bank", eval_bank,
                         "write the held-out embedding bank here");
  train_eval->add_option("--epochs", eval_epochs, "training epochs");
  train_eval->add_option("--seed", eval_seed, "training seed");

  // sample
  auto* sample = app.add_subcommand("sample", "text to two-person motion");
  std::string sample_ckpt, sample_data, sample_caption, sample_out;
  int sample_frames = 64;
  duet::SamplerConfig sampler_flags;
  bool sampler_touched = false;
  auto add_sampler_flags = [&](CLI::App* cmd) {
    cmd->add_option("--ddim-steps", sampler_flags.ddim_steps, "denoise steps")
        ->each([&](const std::string&) { sampler_touched = true; });
    cmd->add_option("--cfg-weight", sampler_flags.guidance_weight,
                    "classifier-free guidance weight")
        ->each([&](const std::string&) { sampler_touched = true; });
    cmd->add_option("--eta", sampler_flags.eta, "stochasticity (0 = exact)")
        ->each([&](const std::string&) { sampler_touched = true; });
  };
  sample->add_option("--ckpt", sample_ckpt, "denoiser checkpoint")->required();
  sample->add_option("--data", sample_data, "dataset directory (stats, fps)")
      ->required();
  sample->add_option("--caption", sample_caption, "interaction text")
      ->required();
  sample->add_option("--frames", sample_frames, "sequence length");
  sample->add_option("--out", sample_out, "motion file to write")->required();
  sample->add_option("--seed", sampler_flags.seed, "sampling seed");
  add_sampler_flags(sample);

  // compose
  auto* compose =
      app.add_subcommand("compose", "synthesize interactions by composition");
  std::string compose_ckpt, compose_data, compose_out;
  duet::cli::ComposeArgs compose_args;
  compose->add_option("--reaction-ckpt", compose_ckpt, "reaction checkpoint")
      ->required();
  compose->add_option("--data", compose_data, "source dataset directory")
      ->required();
  compose->add_option("--out", compose_out, "output corpus directory")
      ->required();
  compose->add_option("--fixtures", compose_args.fixtures,
                      "JSONL exchange log (replayed offline, recorded online)");
  compose->add_flag("--offline,!--online", compose_args.offline,
                    "replay fixtures instead of calling the endpoint");
  compose->add_option("--per-theme", compose_args.per_theme,
                      "descriptions per theme");
  compose->add_option("--seed", compose_args.seed, "composition seed");

  // filter
  auto* filter = app.add_subcommand("filter", "dual-stage synthetic filtering");
  std::string filter_in, filter_eval, filter_bank, filter_out, filter_mode =
      "mean_of_k";
  duet::FilterConfig filter_cfg;
  filter->add_option("--in", filter_in, "synthetic corpus directory")
      ->required();
  filter->add_option("--evaluator", filter_eval, "evaluator checkpoint")
      ->required();
  filter->add_option("--bank", filter_bank, "held-out embedding bank")
      ->required();
  filter->add_option("--out", filter_out,
                     "filtered manifest path (default <in>/manifest_filtered.json)");
  filter->add_option("--threshold", filter_cfg.cosine_threshold,
                     "text-motion cosine floor");
  filter->add_option("--k", filter_cfg.k_neighbors, "neighbors per query");
  filter->add_option("--r-min", filter_cfg.r_min, "annulus inner radius");
  filter->add_option("--r-max", filter_cfg.r_max, "annulus outer radius");
  filter->add_option("--mode", filter_mode,
                     "annulus mode: mean_of_k | per_neighbor");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "metric suite on the test split");
  std::string eval_gen_ckpt, eval_eval_ckpt, eval_data_dir;
  duet::cli::EvaluateArgs eval_args;
  evaluate->add_option("--ckpt", eval_gen_ckpt, "denoiser checkpoint")
      ->required();
  evaluate->add_option("--evaluator", eval_eval_ckpt, "evaluator checkpoint")
      ->required();
  evaluate->add_option("--data", eval_data_dir, "dataset directory")
      ->required();
  evaluate->add_option("--reps", eval_args.reps, "generations per caption");
  evaluate->add_option("--seed", eval_args.seed, "evaluation seed");
  add_sampler_flags(evaluate);

  // export-embeddings
  auto* export_cmd =
      app.add_subcommand("export-embeddings", "write a split's embedding bank");
  std::string export_eval, export_data, export_split = "heldout", export_out;
  export_cmd->add_option("--evaluator", export_eval, "evaluator checkpoint")
      ->required();
  export_cmd->add_option("--data", export_data, "dataset directory")
      ->required();
  export_cmd->add_option("--split", export_split, "train | test | heldout");
  export_cmd->add_option("--out", export_out, "bank file to write")->required();

  // --config / --report may appear after the subcommand name.
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    duet::RunConfig run = load_config_or_default(config_path);
    duet::cli::Report report(report_path);

    if (*toy) return duet::cli::cmd_toy_data(toy_out, toy_n, toy_seed, toy_cfg,
                                             report);

    for (auto [cmd, flags] : {std::pair{train_duet, &duet_flags},
                              std::pair{train_reaction, &reaction_flags}}) {
      if (!*cmd) continue;
      if (!flags->scheme.empty())
        run.model.update_scheme = duet::scheme_from_string(flags->scheme);
      if (flags->lr > 0.0) run.optimizer.lr = flags->lr;
      flags->args.init_checkpoint = flags->init;
      return duet::cli::cmd_train_denoiser(flags->data, flags->out, run,
                                           flags->args, report);
    }

    if (*train_eval)
      return duet::cli::cmd_train_evaluator(eval_data, eval_out, eval_bank, run,
                                            eval_epochs, eval_seed, report);

    if (sampler_touched) {
      run.sampler.ddim_steps = sampler_flags.ddim_steps;
      run.sampler.guidance_weight = sampler_flags.guidance_weight;
      run.sampler.eta = sampler_flags.eta;
    }

    if (*sample) {
      duet::SamplerConfig cfg = run.sampler;
      cfg.seed = sampler_flags.seed;
      return duet::cli::cmd_sample(sample_ckpt, sample_data, sample_caption,
                                   sample_frames, cfg, sample_out, report);
    }

    if (*compose)
      return duet::cli::cmd_compose(compose_ckpt, compose_data, compose_out,
                                    run, compose_args, report);

    if (*filter) {
      duet::AnnulusMode mode;
      if (filter_mode == "mean_of_k")
        mode = duet::AnnulusMode::mean_of_k;
      else if (filter_mode == "per_neighbor")
        mode = duet::AnnulusMode::per_neighbor;
      else
        throw duet::BadArgument("unknown annulus mode: " + filter_mode);
      if (filter_out.empty()) filter_out = filter_in + "/manifest_filtered.json";
      return duet::cli::cmd_filter(filter_in, filter_eval, filter_bank,
                                   filter_cfg, mode, filter_out, report);
    }

    if (*evaluate)
      return duet::cli::cmd_evaluate(eval_gen_ckpt, eval_eval_ckpt,
                                     eval_data_dir, run, eval_args, report);

    if (*export_cmd)
      return duet::cli::cmd_export_embeddings(export_eval, export_data,
                                              export_split, export_out, report);

    std::cerr << "no subcommand selected\n";
    return 1;
  } catch (const duet::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
}
