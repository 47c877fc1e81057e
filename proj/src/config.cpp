// Copyright 2026 The Harmony Authors
// SPDX-License-Identifier: Apache-2.0

#include "harmony/config.hpp"

#include <sstream>

#include "harmony/keyvalue.hpp"

namespace harmony {

namespace {

const char* flag(bool b) { return b ? "true" : "false"; }

std::uint64_t parse_seed(const KeyValue& kv) {
  const int v = parse_int(kv);
  if (v < 0) throw ConfigError("line " + std::to_string(kv.line) + ": " + kv.key + " must be non-negative");
  return static_cast<std::uint64_t>(v);
}

// Applies one non-generator key; false when unknown.
bool set_run_key(RunConfig& c, const KeyValue& kv) {
  TrainOptions& t = c.train;
  PerturbationRanges& p = c.perturbation;
  const std::string& k = kv.key;
  if (k == "epochs") t.schedule.total_epochs = parse_int(kv);
  else if (k == "decay_epoch") t.schedule.decay_epoch = parse_int(kv);
  else if (k == "decay_factor") t.schedule.decay_factor = parse_double(kv);
  else if (k == "lr") t.adam.lr = parse_double(kv);
  else if (k == "beta1") t.adam.beta1 = parse_double(kv);
  else if (k == "beta2") t.adam.beta2 = parse_double(kv);
  else if (k == "adam_eps") t.adam.eps = parse_double(kv);
  else if (k == "batch_size") t.batch_size = parse_int(kv);
  else if (k == "area_floor") t.area_floor = parse_double(kv);
  else if (k == "augment") t.augment = parse_bool(kv);
  else if (k == "resize_factor") t.resize_factor = parse_double(kv);
  else if (k == "flip_probability") t.flip_probability = parse_double(kv);
  else if (k == "max_steps") t.max_steps = parse_int(kv);
  else if (k == "quantize_metrics") t.quantize_metrics = parse_bool(kv);
  else if (k == "log_wall_ms") t.log_wall_ms = parse_bool(kv);
  else if (k == "checkpoint_every") t.checkpoint_every = parse_int(kv);
  else if (k == "prefetch_depth") t.prefetch_depth = parse_int(kv);
  else if (k == "gain_min") p.gain_min = parse_double(kv);
  else if (k == "gain_max") p.gain_max = parse_double(kv);
  else if (k == "bias_max") p.bias_max = parse_double(kv);
  else if (k == "gamma_min") p.gamma_min = parse_double(kv);
  else if (k == "gamma_max") p.gamma_max = parse_double(kv);
  else if (k == "saturation_min") p.saturation_min = parse_double(kv);
  else if (k == "saturation_max") p.saturation_max = parse_double(kv);
  else if (k == "train_manifest") c.train_manifest = kv.value;
  else if (k == "train_dir") c.train_dir = kv.value;
  else if (k == "synthetic_count") c.synthetic_count = parse_int(kv);
  else if (k == "synthetic_seed") c.synthetic_seed = parse_seed(kv);
  else if (k == "output_dir") c.output_dir = kv.value;
  else return false;
  return true;
}

}  // namespace

void RunConfig::set_seed(std::uint64_t seed) {
  generator.seed = seed;
  train.seed = seed;
}

void RunConfig::validate() const {
  generator.validate();
  train.validate();
  try {
    perturbation.validate();
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
  if (train_manifest.empty() && train_dir.empty() && synthetic_count < 1)
    throw ConfigError("synthetic_count must be positive when no training data is given");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

std::string RunConfig::to_text() const {
  std::ostringstream out;
  out << "# generator\n" << generator.to_text();
  const TrainOptions& t = train;
  out << "# schedule and optimizer\n"
      << "epochs = " << t.schedule.total_epochs << "\n"
      << "decay_epoch = " << t.schedule.decay_epoch << "\n"
      << "decay_factor = " << format_double(t.schedule.decay_factor) << "\n"
      << "lr = " << format_double(t.adam.lr) << "\n"
      << "beta1 = " << format_double(t.adam.beta1) << "\n"
      << "beta2 = " << format_double(t.adam.beta2) << "\n"
      << "adam_eps = " << format_double(t.adam.eps) << "\n"
      << "batch_size = " << t.batch_size << "\n"
      << "area_floor = " << format_double(t.area_floor) << "\n"
      << "augment = " << flag(t.augment) << "\n"
      << "resize_factor = " << format_double(t.resize_factor) << "\n"
      << "flip_probability = " << format_double(t.flip_probability) << "\n"
      << "max_steps = " << t.max_steps << "\n"
      << "quantize_metrics = " << flag(t.quantize_metrics) << "\n"
      << "log_wall_ms = " << flag(t.log_wall_ms) << "\n"
      << "checkpoint_every = " << t.checkpoint_every << "\n"
      << "prefetch_depth = " << t.prefetch_depth << "\n";
  const PerturbationRanges& p = perturbation;
  out << "# synthetic composites\n"
      << "gain_min = " << format_double(p.gain_min) << "\n"
      << "gain_max = " << format_double(p.gain_max) << "\n"
      << "bias_max = " << format_double(p.bias_max) << "\n"
      << "gamma_min = " << format_double(p.gamma_min) << "\n"
      << "gamma_max = " << format_double(p.gamma_max) << "\n"
      << "saturation_min = " << format_double(p.saturation_min) << "\n"
      << "saturation_max = " << format_double(p.saturation_max) << "\n";
  out << "# data and output\n";
  if (!train_manifest.empty()) out << "train_manifest = " << train_manifest << "\n";
  if (!train_dir.empty()) out << "train_dir = " << train_dir << "\n";
  out << "synthetic_count = " << synthetic_count << "\n"
      << "synthetic_seed = " << synthetic_seed << "\n"
      << "output_dir = " << output_dir << "\n";
  return out.str();
}

RunConfig RunConfig::from_text(std::string_view text) {
  RunConfig c;
  for (const KeyValue& kv : parse_key_values(text)) {
    if (kv.key == "seed") {
      c.set_seed(parse_seed(kv));
    } else if (!c.generator.set(kv) && !set_run_key(c, kv)) {
      throw ConfigError("line " + std::to_string(kv.line) + ": unknown key " + kv.key);
    }
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) { return RunConfig::from_text(read_file(path)); }

}  // namespace harmony
