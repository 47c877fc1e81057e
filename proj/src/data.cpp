// Copyright 2026 The Harmony Authors
// SPDX-License-Identifier: Apache-2.0

#include "harmony/data.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <numbers>
#include <random>
#include <sstream>

#include "harmony/log.hpp"

namespace harmony {

namespace fs = std::filesystem;

// --- PNG ---------------------------------------------------------------------
//
// libpng reports errors by longjmp. The functions holding a setjmp point keep
// no C++ objects of their own; all state lives behind the io pointer, so the
// jump skips no destructors.

namespace {

struct ReadState {
  std::string_view bytes;
  std::size_t pos = 0;
  char message[128] = {};
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<png_byte> pixels;
  std::vector<png_bytep> rows;
};

void on_png_error(png_structp png, png_const_charp msg) {
  auto* state = static_cast<ReadState*>(png_get_error_ptr(png));
  std::snprintf(state->message, sizeof(state->message), "%s", msg);
  png_longjmp(png, 1);
}

void on_png_warning(png_structp, png_const_charp msg) {
  log::debug(std::string("png: ") + msg);
}

void read_bytes(png_structp png, png_bytep out, png_size_t len) {
  auto* state = static_cast<ReadState*>(png_get_io_ptr(png));
  if (len > state->bytes.size() - state->pos) png_error(png, "unexpected end of data");
  std::memcpy(out, state->bytes.data() + state->pos, len);
  state->pos += len;
}

// Fills state->pixels with 8-bit RGB rows. False on any libpng error.
bool run_png_decode(ReadState* state) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, state, on_png_error, on_png_warning);
  if (png == nullptr) return false;
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_set_read_fn(png, state, read_bytes);
  png_set_user_limits(png, 1u << 14, 1u << 14);
  png_read_info(png, info);

  png_set_expand(png);
  png_set_scale_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_set_interlace_handling(png);
  png_read_update_info(png, info);

  state->width = png_get_image_width(png, info);
  state->height = png_get_image_height(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  if (stride != static_cast<std::size_t>(state->width) * 3) png_error(png, "unsupported pixel layout");
  state->pixels.resize(stride * state->height);
  state->rows.resize(state->height);
  for (std::uint32_t y = 0; y < state->height; ++y) state->rows[y] = state->pixels.data() + y * stride;
  png_read_image(png, state->rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

struct WriteState {
  std::string out;
  char message[128] = {};
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<png_byte> pixels;
};

void on_png_write_error(png_structp png, png_const_charp msg) {
  auto* state = static_cast<WriteState*>(png_get_error_ptr(png));
  std::snprintf(state->message, sizeof(state->message), "%s", msg);
  png_longjmp(png, 1);
}

void write_bytes(png_structp png, png_bytep data, png_size_t len) {
  static_cast<WriteState*>(png_get_io_ptr(png))->out.append(reinterpret_cast<const char*>(data), len);
}

void flush_bytes(png_structp) {}

bool run_png_encode(WriteState* state) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, state, on_png_write_error, on_png_warning);
  if (png == nullptr) return false;
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_write_struct(&png, nullptr);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_set_write_fn(png, state, write_bytes, flush_bytes);
  png_set_IHDR(png, info, static_cast<png_uint_32>(state->width), static_cast<png_uint_32>(state->height), 8,
               state->channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(state->width) * state->channels;
  for (int y = 0; y < state->height; ++y) png_write_row(png, state->pixels.data() + y * stride);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

}  // namespace

std::uint8_t quantize_unit(double v) {
  if (!(v > 0.0)) return 0;  // also catches NaN
  if (v >= 1.0) return 255;
  return static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5));
}

Tensor<float> decode_png(std::string_view bytes) {
  if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0) {
    std::size_t bad = 0;
    static constexpr unsigned char kSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    while (bad < std::min<std::size_t>(8, bytes.size()) && static_cast<unsigned char>(bytes[bad]) == kSignature[bad])
      ++bad;
    throw DecodeError("not a PNG signature", bad);
  }
  ReadState state;
  state.bytes = bytes;
  if (!run_png_decode(&state)) throw DecodeError(std::string("invalid PNG: ") + state.message, state.pos);

  const int h = static_cast<int>(state.height);
  const int w = static_cast<int>(state.width);
  Tensor<float> image(Shape{1, 3, h, w});
  float* out = image.data();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) out[c * plane + i] = static_cast<float>(state.pixels[i * 3 + c]) / 255.0f;
  return image;
}

std::string encode_png(const Tensor<float>& image) {
  const Shape& s = image.shape();
  if (s.n != 1 || (s.c != 3 && s.c != 1))
    throw DimensionError("encode_png expects (1, 3, h, w) or (1, 1, h, w), got " + s.str());
  if (s.h == 0 || s.w == 0) throw ArgumentError("encode_png: empty image");
  WriteState state;
  state.width = s.w;
  state.height = s.h;
  state.channels = s.c;
  const std::size_t plane = static_cast<std::size_t>(s.plane());
  state.pixels.resize(plane * s.c);
  const float* in = image.data();
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < s.c; ++c) state.pixels[i * s.c + c] = quantize_unit(in[c * plane + i]);
  if (!run_png_encode(&state)) throw std::runtime_error(std::string("PNG encode failed: ") + state.message);
  return std::move(state.out);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  if (in.bad()) throw IoError("error reading " + path);
  return std::move(buffer).str();
}

void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("error writing " + path);
}

Tensor<float> load_image(const std::string& path) { return decode_png(read_file(path)); }

void save_image(const std::string& path, const Tensor<float>& image) {
  if (image.c() != 3) throw DimensionError("save_image expects 3 channels, got " + image.shape().str());
  write_file(path, encode_png(image));
}

Tensor<float> load_mask(const std::string& path) {
  const Tensor<float> rgb = load_image(path);
  Tensor<float> mask(Shape{1, 1, rgb.h(), rgb.w()});
  for (int y = 0; y < rgb.h(); ++y)
    for (int x = 0; x < rgb.w(); ++x) {
      const double mean = (double{rgb.at(0, 0, y, x)} + rgb.at(0, 1, y, x) + rgb.at(0, 2, y, x)) / 3.0;
      mask.at(0, 0, y, x) = mean >= 0.5 ? 1.0f : 0.0f;
    }
  return mask;
}

void save_mask(const std::string& path, const Tensor<float>& mask) {
  if (mask.c() != 1) throw DimensionError("save_mask expects 1 channel, got " + mask.shape().str());
  write_file(path, encode_png(mask));
}

double mask_coverage(const Tensor<float>& mask) {
  double sum = 0.0;
  for (float v : mask.values()) sum += v;
  return mask.numel() == 0 ? 0.0 : sum / static_cast<double>(mask.numel());
}

// --- synthetic data ------------------------------------------------------------

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

struct Region {
  bool ellipse = false;
  double cy = 0, cx = 0;  // centre, pixel units
  double ry = 0, rx = 0;  // half extents

  [[nodiscard]] bool contains(double py, double px) const {
    const double dy = (py - cy) / ry;
    const double dx = (px - cx) / rx;
    return ellipse ? dy * dy + dx * dx <= 1.0 : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
  }
};

}  // namespace

Tensor<float> generate_mask(int h, int w, std::uint64_t seed) {
  if (h <= 0 || w <= 0) throw ArgumentError("generate_mask: frame must be non-empty");
  Rng rng(seed);
  Tensor<float> mask(Shape{1, 1, h, w});
  const double frame = static_cast<double>(h) * w;

  auto rasterize = [&](const Region& r) {
    std::size_t count = 0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const bool inside = r.contains(y + 0.5, x + 0.5);
        mask.at(0, 0, y, x) = inside ? 1.0f : 0.0f;
        count += inside;
      }
    return static_cast<double>(count) / frame;
  };

  for (int attempt = 0; attempt < 64; ++attempt) {
    Region r;
    r.ellipse = uniform(rng, 0.0, 1.0) < 0.5;
    const double area = uniform(rng, 0.08, 0.35) * frame;
    const double aspect = std::exp(uniform(rng, -std::numbers::ln2, std::numbers::ln2));  // width / height
    // Box area that gives the target region area.
    const double box = r.ellipse ? area * 4.0 / std::numbers::pi : area;
    const double bh = std::sqrt(box / aspect);
    const double bw = box / bh;
    if (bh > h || bw > w) continue;
    r.ry = bh / 2;
    r.rx = bw / 2;
    r.cy = r.ry + uniform(rng, 0.0, 1.0) * (h - bh);
    r.cx = r.rx + uniform(rng, 0.0, 1.0) * (w - bw);
    const double coverage = rasterize(r);
    if (coverage >= 0.05 && coverage <= 0.40) return mask;
  }
  // Tiny frames: a centred rectangle of about a fifth of the area.
  const int rh = std::max(1, static_cast<int>(std::lround(h * std::sqrt(0.2))));
  const int rw = std::max(1, static_cast<int>(std::lround(w * std::sqrt(0.2))));
  mask = Tensor<float>(Shape{1, 1, h, w});
  for (int y = (h - rh) / 2; y < (h - rh) / 2 + rh; ++y)
    for (int x = (w - rw) / 2; x < (w - rw) / 2 + rw; ++x) mask.at(0, 0, y, x) = 1.0f;
  return mask;
}

Tensor<float> make_scene(int h, int w, std::uint64_t seed) {
  if (h <= 0 || w <= 0) throw ArgumentError("make_scene: frame must be non-empty");
  Rng rng(seed);
  std::array<double, 3> c0{}, c1{};
  for (int c = 0; c < 3; ++c) {
    c0[c] = uniform(rng, 0.1, 0.9);
    c1[c] = uniform(rng, 0.1, 0.9);
  }
  const double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double gy = std::sin(angle), gx = std::cos(angle);

  struct Shape2 {
    Region region;
    std::array<double, 3> colour;
    double shade;  // vertical brightness slope across the shape
  };
  std::vector<Shape2> shapes(static_cast<std::size_t>(std::uniform_int_distribution<int>(3, 6)(rng)));
  for (auto& s : shapes) {
    s.region.ellipse = uniform(rng, 0.0, 1.0) < 0.5;
    s.region.ry = uniform(rng, 0.08, 0.3) * h;
    s.region.rx = uniform(rng, 0.08, 0.3) * w;
    s.region.cy = uniform(rng, 0.0, h);
    s.region.cx = uniform(rng, 0.0, w);
    for (double& v : s.colour) v = uniform(rng, 0.05, 0.95);
    s.shade = uniform(rng, -0.15, 0.15);
  }
  std::array<double, 3> phase{}, fy{}, fx{};
  for (int c = 0; c < 3; ++c) {
    phase[c] = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    fy[c] = uniform(rng, 0.2, 0.9);
    fx[c] = uniform(rng, 0.2, 0.9);
  }

  Tensor<float> image(Shape{1, 3, h, w});
  const double diag = std::abs(gy) * h + std::abs(gx) * w;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double py = y + 0.5, px = x + 0.5;
      double t = (gy * py + gx * px) / diag;
      t = t - std::floor(t);
      std::array<double, 3> v{};
      for (int c = 0; c < 3; ++c) v[c] = c0[c] + (c1[c] - c0[c]) * t;
      for (const auto& s : shapes) {
        if (!s.region.contains(py, px)) continue;
        const double shade = s.shade * (py - s.region.cy) / s.region.ry;
        for (int c = 0; c < 3; ++c) v[c] = s.colour[c] + shade;
      }
      for (int c = 0; c < 3; ++c) {
        const double texture = 0.04 * std::sin(fy[c] * py + fx[c] * px + phase[c]);
        // Stored on the 8-bit grid so a saved scene reloads exactly.
        image.at(0, c, y, x) = static_cast<float>(quantize_unit(v[c] + texture)) / 255.0f;
      }
    }
  return image;
}

void PerturbationRanges::validate() const {
  auto ordered = [](double lo, double hi, const char* what) {
    if (!(lo <= hi) || !std::isfinite(lo) || !std::isfinite(hi))
      throw ArgumentError(std::string("perturbation range for ") + what + " is empty");
  };
  ordered(gain_min, gain_max, "gain");
  ordered(gamma_min, gamma_max, "gamma");
  ordered(saturation_min, saturation_max, "saturation");
  if (!(bias_max >= 0.0) || !std::isfinite(bias_max)) throw ArgumentError("bias_max must be non-negative");
  if (gain_min < 0.0 || gamma_min <= 0.0 || saturation_min < 0.0)
    throw ArgumentError("gain and saturation must be non-negative, gamma positive");
}

PerturbationSpec PerturbationSpec::sample(const PerturbationRanges& ranges, std::uint64_t seed) {
  ranges.validate();
  Rng rng(seed);
  PerturbationSpec spec;
  spec.seed = seed;
  for (double& g : spec.gain) g = uniform(rng, ranges.gain_min, ranges.gain_max);
  for (double& b : spec.bias) b = uniform(rng, -ranges.bias_max, ranges.bias_max);
  spec.gamma = uniform(rng, ranges.gamma_min, ranges.gamma_max);
  spec.saturation = uniform(rng, ranges.saturation_min, ranges.saturation_max);
  return spec;
}

bool PerturbationSpec::is_identity() const {
  for (int c = 0; c < 3; ++c)
    if (gain[c] != 1.0 || bias[c] != 0.0) return false;
  return gamma == 1.0 && saturation == 1.0;
}

CompositeSample synthesize_composite(const Tensor<float>& gt, const Tensor<float>& mask,
                                     const PerturbationSpec& spec) {
  if (gt.n() != 1 || gt.c() != 3) throw DimensionError("synthesize_composite: gt must be (1, 3, h, w)");
  if (mask.shape() != Shape{1, 1, gt.h(), gt.w()})
    throw DimensionError("synthesize_composite: mask " + mask.shape().str() + " does not match gt " +
                         gt.shape().str());
  std::size_t area = 0;
  for (float m : mask.values()) {
    if (m != 0.0f && m != 1.0f) throw ArgumentError("synthesize_composite: mask is not binary");
    area += m == 1.0f;
  }
  if (area == 0) throw EmptyRegionError("synthesize_composite: mask is empty");

  Tensor<float> composite = gt.clone();
  for (int y = 0; y < gt.h(); ++y)
    for (int x = 0; x < gt.w(); ++x) {
      if (mask.at(0, 0, y, x) == 0.0f) continue;
      std::array<double, 3> q{};
      for (int c = 0; c < 3; ++c) q[c] = spec.gain[c] * std::pow(double{gt.at(0, c, y, x)}, spec.gamma) + spec.bias[c];
      if (spec.saturation != 1.0) {
        const double luma = 0.299 * q[0] + 0.587 * q[1] + 0.114 * q[2];
        for (double& v : q) v = luma + spec.saturation * (v - luma);
      }
      for (int c = 0; c < 3; ++c) composite.at(0, c, y, x) = static_cast<float>(std::clamp(q[c], 0.0, 1.0));
    }
  return {composite, mask.clone(), gt};
}

// --- manifests -----------------------------------------------------------------

std::vector<ManifestEntry> parse_manifest(std::string_view text, const std::string& base_dir) {
  const fs::path base(base_dir);
  auto resolve = [&](const std::string& p) {
    const fs::path path(p);
    return (path.is_absolute() ? path : base / path).lexically_normal().string();
  };
  std::vector<ManifestEntry> entries;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find('\n', start), text.size());
    const std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    const std::string where = "manifest line " + std::to_string(line_no) + ": ";
    const nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw ArgumentError(where + "not a JSON object");
    auto text_field = [&](const char* key) -> std::optional<std::string> {
      const auto it = j.find(key);
      if (it == j.end() || it->is_null()) return std::nullopt;
      if (!it->is_string()) throw ArgumentError(where + key + " must be a string");
      return it->get<std::string>();
    };
    ManifestEntry e;
    const auto gt = text_field("gt_path");
    const auto mask = text_field("mask_path");
    if (!gt || !mask) throw ArgumentError(where + "gt_path and mask_path are required");
    e.gt_path = resolve(*gt);
    e.mask_path = resolve(*mask);
    if (const auto comp = text_field("composite_path")) e.composite_path = resolve(*comp);
    if (const auto it = j.find("seed"); it != j.end()) {
      if (!it->is_number_unsigned()) throw ArgumentError(where + "seed must be a non-negative integer");
      e.seed = it->get<std::uint64_t>();
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  return parse_manifest(read_file(path), fs::path(path).parent_path().string());
}

CompositeSample load_sample(const ManifestEntry& entry, const PerturbationRanges& ranges) {
  const Tensor<float> gt = load_image(entry.gt_path);
  const Tensor<float> mask = load_mask(entry.mask_path);
  if (mask.h() != gt.h() || mask.w() != gt.w())
    throw ArgumentError("mask " + entry.mask_path + " does not match image " + entry.gt_path);
  if (!entry.composite_path) return synthesize_composite(gt, mask, PerturbationSpec::sample(ranges, entry.seed));
  const Tensor<float> composite = load_image(*entry.composite_path);
  if (composite.shape() != gt.shape())
    throw ArgumentError("composite " + *entry.composite_path + " does not match image " + entry.gt_path);
  return {composite, mask, gt};
}

std::vector<ManifestEntry> scan_triplet_directory(const std::string& dir) {
  const fs::path root(dir);
  const fs::path composites = root / "composite_images";
  if (!fs::is_directory(composites)) throw IoError("no composite_images directory in " + dir);
  std::vector<fs::path> files;
  for (const auto& item : fs::directory_iterator(composites))
    if (item.is_regular_file() && item.path().extension() == ".png") files.push_back(item.path());
  std::sort(files.begin(), files.end());

  std::vector<ManifestEntry> entries;
  for (const auto& file : files) {
    const std::string stem = file.stem().string();
    const std::size_t last = stem.rfind('_');
    const std::size_t mid = last == std::string::npos || last == 0 ? std::string::npos : stem.rfind('_', last - 1);
    if (mid == std::string::npos || mid == 0) throw ArgumentError("unexpected composite name " + file.string());
    ManifestEntry e;
    e.composite_path = file.string();
    e.mask_path = (root / "masks" / (stem.substr(0, last) + ".png")).string();
    e.gt_path = (root / "real_images" / (stem.substr(0, mid) + ".png")).string();
    for (const std::string* p : {&e.mask_path, &e.gt_path})
      if (!fs::exists(*p)) throw IoError("missing " + *p + " for " + file.string());
    entries.push_back(std::move(e));
  }
  return entries;
}

CompositeSample synthetic_sample(int size, std::uint64_t seed, const PerturbationRanges& ranges) {
  const Tensor<float> gt = make_scene(size, size, derive_seed(seed, 0));
  const Tensor<float> mask = generate_mask(size, size, derive_seed(seed, 1));
  return synthesize_composite(gt, mask, PerturbationSpec::sample(ranges, derive_seed(seed, 2)));
}

std::string write_synthetic_dataset(const std::string& dir, int count, int size, std::uint64_t seed,
                                    const PerturbationRanges& ranges) {
  if (count <= 0 || size <= 0) throw ArgumentError("synthetic dataset needs positive count and size");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
  std::string manifest;
  for (int i = 0; i < count; ++i) {
    const std::uint64_t sample_seed = derive_seed(seed, static_cast<std::uint64_t>(i));
    const CompositeSample s = synthetic_sample(size, sample_seed, ranges);

    char id[16];
    std::snprintf(id, sizeof(id), "%04d", i);
    const std::string gt_name = std::string("gt_") + id + ".png";
    const std::string mask_name = std::string("mask_") + id + ".png";
    const std::string comp_name = std::string("composite_") + id + ".png";
    save_image((fs::path(dir) / gt_name).string(), s.gt);
    save_mask((fs::path(dir) / mask_name).string(), s.mask);
    save_image((fs::path(dir) / comp_name).string(), s.composite);
    nlohmann::ordered_json line;
    line["gt_path"] = gt_name;
    line["mask_path"] = mask_name;
    line["composite_path"] = comp_name;
    line["seed"] = derive_seed(sample_seed, 2);
    manifest += line.dump() + "\n";
  }
  const std::string path = (fs::path(dir) / "manifest.jsonl").string();
  write_file(path, manifest);
  return path;
}

}  // namespace harmony
