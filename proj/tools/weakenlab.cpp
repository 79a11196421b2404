#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "weakenlab/cli/commands.hpp"

using namespace weakenlab::cli;

int main(int argc, char** argv) {
  CLI::App app{"weakenlab: Feature Weaken experiments"};
  app.set_version_flag("--version", std::string(WEAKENLAB_VERSION));
  app.require_subcommand(1);

  CommandOptions opts;
  opts.log = &std::cerr;
  opts.out = &std::cout;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string level;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config_path, "JSON experiment config (defaults when omitted)");
    sub->add_option("--out", opts.out_dir, "output directory")->capture_default_str();
    sub->add_option("--seed", seed, "run only this seed");
    sub->add_option("--threads", threads, "parallel independent runs");
    return sub;
  };
  auto* train = common(app.add_subcommand("train", "train every configured method for every seed"));
  auto* sweep = common(app.add_subcommand("sweep", "weaken-strength sweep at the hidden or embedding level"));
  sweep->add_option("--level", level, "hidden or embedding")->check(CLI::IsMember({"hidden", "embedding"}));
  sweep->add_option("--ws", opts.ws_list, "weaken strengths")->delimiter(',');
  auto* attack = common(app.add_subcommand("attack", "white-box and black-box FGSM/I-FGSM accuracy tables"));
  auto* eval = common(app.add_subcommand("eval", "clean top-1/top-5 of a checkpoint"));
  eval->add_option("--checkpoint", opts.checkpoint, "model checkpoint")->required();
  eval->add_option("--split", opts.split, "val or train")->check(CLI::IsMember({"val", "train"}))->capture_default_str();
  auto* preview = common(app.add_subcommand("weaken-preview", "weakened sample images and scatter CSVs"));
  preview->add_option("--ws", opts.ws_list, "weaken strengths")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  for (auto* sub : {train, sweep, attack, eval, preview}) {
    if (!sub->parsed()) continue;
    if (sub->count("--seed")) opts.seed = seed;
    if (sub->count("--threads")) opts.threads = threads;
  }
  if (sweep->count("--level")) opts.level = level;

  if (train->parsed()) return cmd_train(opts);
  if (sweep->parsed()) return cmd_sweep(opts);
  if (attack->parsed()) return cmd_attack(opts);
  if (eval->parsed()) return cmd_eval(opts);
  return cmd_weaken_preview(opts);
}
