// Copyright 2026 The Harmony Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "harmony/tensor.hpp"

namespace harmony {

/// File missing, unreadable or unwritable.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// --- images ------------------------------------------------------------------
//
// Images are Tensor<float> of shape (1, 3, h, w) holding 8-bit values mapped
// to [0, 1]; masks are (1, 1, h, w) holding exactly 0 or 1.

/// Decodes an 8-bit or 16-bit PNG of any colour type into RGB. Alpha is
/// dropped. Throws DecodeError with the stream offset reached when libpng
/// gave up.
Tensor<float> decode_png(std::string_view bytes);

/// Encodes (1, 3, h, w) as 8-bit RGB or (1, 1, h, w) as 8-bit gray. Values
/// are clamped to [0, 1] and rounded half up: floor(v * 255 + 0.5).
std::string encode_png(const Tensor<float>& image);

/// 8-bit quantization used by encode_png.
std::uint8_t quantize_unit(double v);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

Tensor<float> load_image(const std::string& path);
void save_image(const std::string& path, const Tensor<float>& image);

/// Loads a PNG as a binary mask: a pixel is foreground when its mean
/// channel value is at least 0.5.
Tensor<float> load_mask(const std::string& path);
void save_mask(const std::string& path, const Tensor<float>& mask);

/// Fraction of pixels set in a (1, 1, h, w) mask.
double mask_coverage(const Tensor<float>& mask);

// --- synthetic data ----------------------------------------------------------

/// Independent child seed for a numbered stream (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

/// Random ellipse or rectangle covering 5% to 40% of the frame. Frames too
/// small to hit that band get the closest centred rectangle instead.
Tensor<float> generate_mask(int h, int w, std::uint64_t seed);

/// Procedural RGB scene: smooth gradient, a few flat-shaded shapes and a
/// low-amplitude texture, so foreground regions are never constant.
Tensor<float> make_scene(int h, int w, std::uint64_t seed);

struct PerturbationRanges {
  double gain_min = 0.6;
  double gain_max = 1.4;
  double bias_max = 0.15;  // bias in [-bias_max, bias_max]
  double gamma_min = 0.7;
  double gamma_max = 1.4;
  double saturation_min = 0.6;
  double saturation_max = 1.4;

  void validate() const;
  friend bool operator==(const PerturbationRanges&, const PerturbationRanges&) = default;
};

/// Appearance change applied to a foreground: per-channel gain and bias,
/// one gamma and one saturation scale about the pixel's luma.
struct PerturbationSpec {
  std::array<double, 3> gain{1.0, 1.0, 1.0};
  std::array<double, 3> bias{0.0, 0.0, 0.0};
  double gamma = 1.0;
  double saturation = 1.0;
  std::uint64_t seed = 0;

  static PerturbationSpec sample(const PerturbationRanges& ranges, std::uint64_t seed);
  [[nodiscard]] bool is_identity() const;
};

struct CompositeSample {
  Tensor<float> composite;  // (1, 3, h, w)
  Tensor<float> mask;       // (1, 1, h, w)
  Tensor<float> gt;         // (1, 3, h, w)
};

/// Foreground pixels become clamp(sat(gain * p^gamma + bias)); background
/// pixels are copied bit for bit. Throws EmptyRegionError on an empty mask
/// and ArgumentError on a non-binary one.
CompositeSample synthesize_composite(const Tensor<float>& gt, const Tensor<float>& mask,
                                     const PerturbationSpec& spec);

// --- manifests ---------------------------------------------------------------

/// One JSON line: {"gt_path", "mask_path", "composite_path"?, "seed"?}.
/// Relative paths are resolved against the manifest's directory.
struct ManifestEntry {
  std::string gt_path;
  std::string mask_path;
  std::optional<std::string> composite_path;
  std::uint64_t seed = 0;
};

/// Throws IoError when the file cannot be read and ArgumentError naming the
/// line on malformed content.
std::vector<ManifestEntry> read_manifest(const std::string& path);
std::vector<ManifestEntry> parse_manifest(std::string_view text, const std::string& base_dir);

/// Loads the files of one entry. Without a composite path the composite is
/// synthesized from the entry seed.
CompositeSample load_sample(const ManifestEntry& entry, const PerturbationRanges& ranges);

/// Triplet directories laid out as composite_images/<id>_<fg>_<ver>.png,
/// masks/<id>_<fg>.png and real_images/<id>.png, in filename order.
std::vector<ManifestEntry> scan_triplet_directory(const std::string& dir);

/// The synthetic sample a seed stands for: make_scene, generate_mask and a
/// sampled perturbation, each from its own derived stream.
CompositeSample synthetic_sample(int size, std::uint64_t seed, const PerturbationRanges& ranges);

/// Writes count synthetic samples of size x size (gt, mask and composite
/// PNGs) plus manifest.jsonl into dir. Returns the manifest path.
std::string write_synthetic_dataset(const std::string& dir, int count, int size,
                                    std::uint64_t seed, const PerturbationRanges& ranges);

}  // namespace harmony
