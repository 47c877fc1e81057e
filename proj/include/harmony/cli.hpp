// Copyright 2026 The Harmony Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

// Command implementations behind the `harmony` executable. Each returns the
// process exit code and writes human-readable text to `out`, diagnostics to
// `err`.

namespace harmony {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;    // bad arguments, config, input files
inline constexpr int kExitNumeric = 3;  // training halted on a non-finite value

struct TrainArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;          // overrides output_dir
  std::string checkpoint_path;  // defaults to <output_dir>/model.hkpt
  bool quantize_metrics = false;
};

/// Trains per the config and writes the checkpoint and the JSON-lines log
/// (<output_dir>/train_log.jsonl).
int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err);

struct HarmonizeArgs {
  std::string checkpoint_path;
  std::string composite_path;
  std::string mask_path;
  std::string out_path;
};

/// Writes the harmonized composite. Image and mask must both be
/// input_size x input_size.
int cmd_harmonize(const HarmonizeArgs& args, std::ostream& out, std::ostream& err);

struct EvalArgs {
  std::string checkpoint_path;  // empty: score the raw composites
  std::string manifest_path;
  std::string config_path;      // optional, for synthesis ranges
  std::string json_path;        // empty: print the JSON after the table
  bool quantize_metrics = false;
};

/// Per-sample and mean psnr / mse / fmse as an aligned table plus JSON.
int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err);

struct AttnMapArgs {
  std::string checkpoint_path;
  std::string composite_path;
  std::string mask_path;
  std::string out_dir;
  /// Foreground pixel (row, col) in image coordinates for the LTL map.
  std::optional<std::pair<int, int>> ltl_pixel;
};

/// Writes contribution.png (PTL attention mass per background pixel, min-max
/// normalized, zero on the foreground) and overlay.png; with ltl_pixel also
/// ltl_attention.png for that location.
int cmd_attnmap(const AttnMapArgs& args, std::ostream& out, std::ostream& err);

struct SynthArgs {
  std::string out_dir;
  int count = 8;
  int size = 64;
  std::uint64_t seed = 0;
  std::string config_path;  // optional, for synthesis ranges
};

/// Writes a synthetic dataset and its manifest.
int cmd_synth(const SynthArgs& args, std::ostream& out, std::ostream& err);

}  // namespace harmony
