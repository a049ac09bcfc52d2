#include <iostream>

#include <CLI11.hpp>

#include "vtb/cli/commands.hpp"

using namespace vtb::cli;

int main(int argc, char** argv) {
  CLI::App app{"vtb: speech/text instruction tuning toolkit"};
  app.require_subcommand(1);
  Options o;
  std::string config, out, manifest, checkpoint, task;
  std::uint64_t seed = 0;
  std::int64_t steps = 0;

  auto add_common = [&](CLI::App* sc, bool need_config) {
    auto* c = sc->add_option("--config", config, "run config (JSON)");
    if (need_config) c->required();
    sc->add_option("--seed", seed, "override the config seed");
  };

  auto* gen = app.add_subcommand("gen", "generate a training/eval manifest");
  std::string kind;
  gen->add_option("kind", kind, "sqa | mixed | asr-ast | text")->required();
  add_common(gen, true);
  gen->add_option("--out", out, "output directory for the generation report");

  auto* train = app.add_subcommand("train", "train (resumes from the latest checkpoint)");
  add_common(train, true);
  train->add_option("--steps", steps, "override optimizer.total_steps");
  train->add_option("--out", out, "output directory");
  train->add_option("--stop-after", o.stop_after)->group("");
  bool quiet = false;
  train->add_flag("--quiet", quiet, "only print the final summary");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  add_common(eval, true);
  eval->add_option("--task", task, "asr | ast | sqa | spoken_ifeval")->required();
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--manifest", manifest)->required();
  eval->add_option("--out", out, "report path (JSONL)");

  auto* merge = app.add_subcommand("merge", "fold LoRA factors into the base weights");
  add_common(merge, false);
  merge->add_option("--checkpoint", checkpoint)->required();
  merge->add_option("--out", out, "merged checkpoint path");

  auto* chat = app.add_subcommand("chat", "interactive session; @file.wav attaches audio");
  add_common(chat, false);
  chat->add_option("--checkpoint", checkpoint)->required();

  auto* demo = app.add_subcommand("demo-data", "write small demo corpora and a config");
  std::string demo_dir;
  std::uint64_t demo_seed = 7;
  demo->add_option("dir", demo_dir)->required();
  demo->add_option("--seed", demo_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  auto set = [&](CLI::App* sc) {
    o.config = config;
    if (sc->count("--seed")) o.seed = seed;
    if (sc->get_option_no_throw("--steps") && sc->count("--steps")) o.steps = steps;
    if (sc->get_option_no_throw("--out") && sc->count("--out")) o.out = out;
    if (!task.empty()) o.task = task;
    if (!manifest.empty()) o.manifest = manifest;
    if (!checkpoint.empty()) o.checkpoint = checkpoint;
    o.quiet = quiet;
  };

  try {
    if (*gen) {
      set(gen);
      return cmd_gen(parse_gen_kind(kind), o, std::cout);
    }
    if (*train) {
      set(train);
      return cmd_train(o, std::cout);
    }
    if (*eval) {
      set(eval);
      return cmd_eval(o, std::cout);
    }
    if (*merge) {
      set(merge);
      return cmd_merge(o, std::cout);
    }
    if (*chat) {
      set(chat);
      return cmd_chat(o, std::cin, std::cout, std::cerr);
    }
    if (*demo) return cmd_demo_data(demo_dir, demo_seed, std::cout);
  } catch (const vtb::UsageError& e) {
    std::cerr << error_record(e) << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << error_record(e) << "\n";
    return 1;
  }
  return 0;
}
