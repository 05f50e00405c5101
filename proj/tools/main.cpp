#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "anymodal/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"any-to-any toy pipeline: data synthesis, staged training, evaluation"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> sets;
  int jobs = 0;
  uint64_t seed = 0;
  app.add_option("--config", config_path, "config file (key = value lines)");
  app.add_option("--set", sets, "override, key=value; repeatable")->take_all();
  app.add_option("--jobs", jobs, "parallelism cap");
  app.add_option("--seed", seed, "root seed");

  bool force = false;
  auto* synth = app.add_subcommand("synth", "build the dataset directory");
  synth->add_flag("--force", force, "overwrite a non-empty dataset directory");

  auto* pre_enc = app.add_subcommand("pretrain-encoders", "contrastive joint-encoder training");
  auto* pre_dec = app.add_subcommand("pretrain-decoders", "caption-conditioned decoder training");

  std::string phase, resume;
  auto* train = app.add_subcommand("train", "one training phase");
  train->add_option("--phase", phase, "1, 2, 3a or 3b")->required();
  train->add_option("--resume", resume, "checkpoint to resume from");

  std::string eval_variant, eval_ckpt;
  double eval_alpha = 1.0;
  auto* eval = app.add_subcommand("eval", "per-type benchmark for one variant");
  eval->add_option("--variant", eval_variant, "ta, veh-img or veh-imgvid")->required();
  eval->add_option("--alpha", eval_alpha, "conditioning rate");
  eval->add_option("--ckpt", eval_ckpt, "checkpoint to evaluate");

  std::string sweep_alphas, sweep_ckpt;
  auto* sweep = app.add_subcommand("sweep", "conditioning-rate sweep");
  sweep->add_option("--alphas", sweep_alphas, "comma-separated rates in [0,1]");
  sweep->add_option("--ckpt", sweep_ckpt, "checkpoint to sweep");

  std::string prompt, gen_variant;
  auto* generate = app.add_subcommand("generate", "decode a prompt file and synthesize");
  generate->add_option("--prompt", prompt, "prompt file")->required();
  generate->add_option("--variant", gen_variant, "ta, veh-img or veh-imgvid");

  CLI11_PARSE(app, argc, argv);

  try {
    am::cfg::Config c = am::cfg::Config::defaults();
    if (!config_path.empty()) c.load_file(config_path);
    c.apply_env();
    c.merge_overrides(sets);
    if (app.count("--jobs")) c.set("jobs", std::to_string(jobs));
    if (app.count("--seed")) c.set("seed", std::to_string(seed));

    std::string dir;
    if (synth->parsed()) {
      if (force) c.set("force", "1");
      dir = am::cli::cmd_synth(c);
    } else if (pre_enc->parsed()) {
      dir = am::cli::cmd_pretrain_encoders(c);
    } else if (pre_dec->parsed()) {
      dir = am::cli::cmd_pretrain_decoders(c);
    } else if (train->parsed()) {
      if (!resume.empty()) c.set("train.resume", resume);
      dir = am::cli::cmd_train(phase, c);
    } else if (eval->parsed()) {
      c.set("eval.variant", eval_variant);
      if (eval->count("--alpha")) c.set("eval.alpha", std::to_string(eval_alpha));
      if (!eval_ckpt.empty()) c.set("eval.ckpt", eval_ckpt);
      dir = am::cli::cmd_eval(c);
    } else if (sweep->parsed()) {
      if (!sweep_alphas.empty()) c.set("sweep.alphas", sweep_alphas);
      if (!sweep_ckpt.empty()) c.set("sweep.ckpt", sweep_ckpt);
      dir = am::cli::cmd_sweep(c);
    } else if (generate->parsed()) {
      c.set("generate.prompt", prompt);
      if (!gen_variant.empty()) c.set("generate.variant", gen_variant);
      dir = am::cli::cmd_generate(c);
    }
    std::cout << dir << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
