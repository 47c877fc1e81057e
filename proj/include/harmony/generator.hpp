// Copyright 2026 The Harmony Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "harmony/keyvalue.hpp"
#include "harmony/layers.hpp"
#include "harmony/ltl.hpp"
#include "harmony/ptl.hpp"

namespace harmony {

enum class Reconstruction { kResidual, kDirect };

/// Shape and behaviour of the U-Net generator. Placements are given as
/// divisors of the input size: a module at divisor d runs on the decoder
/// features of size input_size / d.
struct GeneratorConfig {
  int input_size = 256;
  int base_channels = 16;
  int channel_multiplier = 1;
  /// Stride-2 stages; 0 halves until the next halving would drop below 8
  /// (5 stages and an 8x8 bottleneck at 256).
  int encoder_depth = 0;
  bool use_ltl = true;
  std::vector<int> ltl_divisors = {8};
  bool ltl_in_masked = false;
  double ltl_attn_scale = 1.0;
  bool use_ptl = true;
  int ptl_divisor = 2;
  int ptl_patch_divisor = 8;
  int ptl_stride_divisor = 32;
  double ptl_attn_scale = 1.0;
  Reconstruction reconstruction = Reconstruction::kResidual;
  double leaky_slope = 0.2;
  double norm_eps = 1e-5;
  std::uint64_t seed = 0;

  /// Applies one entry; false when the key is not a generator key.
  bool set(const KeyValue& kv);
  /// Throws ConfigError on inconsistent values.
  void validate() const;
  /// One `key = value` line per field, in a fixed order.
  [[nodiscard]] std::string to_text() const;
  /// Parses text produced by to_text; unknown keys are rejected.
  static GeneratorConfig from_text(std::string_view text);

  /// encoder_depth with the automatic value resolved.
  [[nodiscard]] int depth() const;

  /// Channel width at ladder level l (resolution input_size / 2^l).
  [[nodiscard]] int channels_at(int level) const;

  friend bool operator==(const GeneratorConfig&, const GeneratorConfig&) = default;
};

template <typename Real>
struct GeneratorOutput {
  Tensor<Real> output;    // composed image
  Tensor<Real> residual;  // raw head prediction
  /// Filled only when traces are requested.
  std::vector<LtlTrace<Real>> ltl;
  std::vector<int> ltl_sizes;
  PtlTrace<Real> ptl;
  int ptl_size = 0;
};

/// O = I + residual where mask = 1, and O = I bit-exact elsewhere. The mask
/// is (n, 1, h, w) and must hold only 0 and 1.
template <typename Real>
Tensor<Real> compose_residual(const Tensor<Real>& image, const Tensor<Real>& residual,
                              const Tensor<Real>& mask);

/// O = pred where mask = 1 and O = I elsewhere.
template <typename Real>
Tensor<Real> compose_direct(const Tensor<Real>& image, const Tensor<Real>& pred,
                            const Tensor<Real>& mask);

/// Throws ArgumentError unless every value is exactly 0 or 1.
template <typename Real>
void require_binary_mask(const Tensor<Real>& mask);

template <typename Real>
class Generator {
 public:
  explicit Generator(const GeneratorConfig& config);

  Generator(const Generator&) = delete;
  Generator& operator=(const Generator&) = delete;
  Generator(Generator&&) noexcept = default;
  Generator& operator=(Generator&&) noexcept = default;

  /// image (n, 3, S, S) in [0, 1], mask (n, 1, S, S) binary, S = input_size.
  [[nodiscard]] GeneratorOutput<Real> forward(const Tensor<Real>& image, const Tensor<Real>& mask,
                                              bool keep_traces = false) const;

  [[nodiscard]] ParamStore<Real>& params() { return *params_; }
  [[nodiscard]] const ParamStore<Real>& params() const { return *params_; }
  [[nodiscard]] const GeneratorConfig& config() const { return config_; }

 private:
  struct Block {
    Conv2dLayer<Real> conv;
    AffineInstanceNorm<Real> norm;
  };
  Tensor<Real> run(const Block& block, const Tensor<Real>& x) const;

  GeneratorConfig config_;
  std::unique_ptr<ParamStore<Real>> params_;
  Block stem_;
  std::vector<Block> down_;  // level 1..depth
  Block bottleneck_;
  std::vector<Block> up_;  // index l: level l, for l < depth
  Conv2dLayer<Real> head_;
  std::vector<std::unique_ptr<LtlModule<Real>>> ltl_;  // index l: level l
  std::unique_ptr<PtlModule<Real>> ptl_;
  int ptl_level_ = -1;
};

// --- checkpoints ---------------------------------------------------------------

struct CheckpointRecord {
  std::string name;
  std::vector<int> dims;
  std::vector<float> values;
};

struct Checkpoint {
  GeneratorConfig config;
  std::vector<CheckpointRecord> records;
};

/// Byte layout: "HKPT", u16 version, u32 config length + config text, then
/// per parameter u16 name length, name, u8 rank, u32 dims, f32 values; all
/// little-endian.
template <typename Real>
std::string encode_checkpoint(const GeneratorConfig& config, const ParamStore<Real>& params);
Checkpoint decode_checkpoint(std::string_view bytes);

template <typename Real>
void save_checkpoint(const std::string& path, const GeneratorConfig& config,
                     const ParamStore<Real>& params);
Checkpoint read_checkpoint(const std::string& path);

/// Copies checkpoint values into a store with identical names and extents.
template <typename Real>
void load_parameters(const Checkpoint& checkpoint, ParamStore<Real>& params);

/// Builds a generator from a checkpoint file.
template <typename Real>
Generator<Real> load_generator(const std::string& path);

extern template class Generator<float>;
extern template class Generator<double>;

}  // namespace harmony
