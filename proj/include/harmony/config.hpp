// Copyright 2026 The Harmony Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "harmony/data.hpp"
#include "harmony/generator.hpp"
#include "harmony/training.hpp"

namespace harmony {

/// Everything a run needs, as flat `key = value` text. Defaults are the
/// full-size training constants (lr 0.001, betas 0.9/0.999, A_min 100,
/// batch 4, 140 epochs with decay at 120, 256 input).
///
/// Training data comes from train_manifest, else train_dir (triplet layout),
/// else synthetic_count in-memory synthetic samples at input_size.
struct RunConfig {
  GeneratorConfig generator;
  TrainOptions train;
  PerturbationRanges perturbation;
  std::string train_manifest;
  std::string train_dir;
  int synthetic_count = 8;
  std::uint64_t synthetic_seed = 0;
  std::string output_dir = "run";

  /// The `seed` key drives initialization, shuffling and augmentation.
  void set_seed(std::uint64_t seed);

  void validate() const;
  [[nodiscard]] std::string to_text() const;
  /// Unknown keys, duplicates and malformed values are ConfigErrors naming
  /// the line.
  static RunConfig from_text(std::string_view text);
};

/// Reads and parses a config file; IoError if it cannot be read.
RunConfig load_run_config(const std::string& path);

}  // namespace harmony
