// Copyright 2026 The Harmony Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end: train, harmonize, eval, attnmap, synth.

#include <CLI11.hpp>
#include <iostream>

#include "harmony/cli.hpp"

int main(int argc, char** argv) {
  using namespace harmony;
  CLI::App app{"Image harmonization with location- and patch-level attention"};
  app.require_subcommand(1);

  TrainArgs train;
  std::uint64_t train_seed = 0;
  auto* t = app.add_subcommand("train", "Train a generator and write a checkpoint and log");
  t->add_option("--config", train.config_path, "Run config (key = value)")->required()->check(CLI::ExistingFile);
  auto* seed_opt = t->add_option("--seed", train_seed, "Overrides the config seed");
  t->add_option("--out", train.out_dir, "Output directory (overrides output_dir)");
  t->add_option("--checkpoint", train.checkpoint_path, "Checkpoint path (default <out>/model.hkpt)");
  t->add_flag("--quantize-metrics", train.quantize_metrics, "Score outputs after 8-bit quantization");

  HarmonizeArgs harmonize;
  auto* h = app.add_subcommand("harmonize", "Harmonize one composite");
  h->add_option("--checkpoint", harmonize.checkpoint_path)->required();
  h->add_option("--composite", harmonize.composite_path)->required();
  h->add_option("--mask", harmonize.mask_path)->required();
  h->add_option("--out", harmonize.out_path)->required();

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Score a manifest; without --checkpoint scores the composites");
  e->add_option("--checkpoint", eval.checkpoint_path);
  e->add_option("--manifest", eval.manifest_path)->required();
  e->add_option("--config", eval.config_path, "Config supplying perturbation ranges");
  e->add_option("--json", eval.json_path, "Write the JSON report here");
  e->add_flag("--quantize-metrics", eval.quantize_metrics);

  AttnMapArgs attn;
  std::vector<int> pixel;
  auto* a = app.add_subcommand("attnmap", "Write PTL contribution maps (and optionally an LTL map)");
  a->add_option("--checkpoint", attn.checkpoint_path)->required();
  a->add_option("--composite", attn.composite_path)->required();
  a->add_option("--mask", attn.mask_path)->required();
  a->add_option("--out", attn.out_dir)->required();
  a->add_option("--ltl-pixel", pixel, "Foreground pixel as ROW COL")->expected(2);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Write a synthetic dataset with a manifest");
  s->add_option("--out", synth.out_dir)->required();
  s->add_option("--count", synth.count)->check(CLI::PositiveNumber);
  s->add_option("--size", synth.size)->check(CLI::PositiveNumber);
  s->add_option("--seed", synth.seed);
  s->add_option("--config", synth.config_path, "Config supplying perturbation ranges");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (*t) {
    if (*seed_opt) train.seed = train_seed;
    return cmd_train(train, std::cout, std::cerr);
  }
  if (*h) return cmd_harmonize(harmonize, std::cout, std::cerr);
  if (*e) return cmd_eval(eval, std::cout, std::cerr);
  if (*a) {
    if (pixel.size() == 2) attn.ltl_pixel = std::pair{pixel[0], pixel[1]};
    return cmd_attnmap(attn, std::cout, std::cerr);
  }
  return cmd_synth(synth, std::cout, std::cerr);
}
