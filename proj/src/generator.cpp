// Copyright 2026 The Harmony Authors
// SPDX-License-Identifier: Apache-2.0

#include "harmony/generator.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "op_support.hpp"

namespace harmony {
namespace {

bool power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

int level_of(int divisor) { return std::countr_zero(static_cast<unsigned>(divisor)); }

std::string join(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

void require_compose_shapes(const char* op, const Shape& image, const Shape& other, const Shape& mask) {
  if (image != other || mask.n != image.n || mask.c != 1 || mask.h != image.h || mask.w != image.w) {
    throw DimensionError(std::string(op) + ": shapes " + image.str() + ", " + other.str() +
                         " and mask " + mask.str() + " do not agree");
  }
}

}  // namespace

bool GeneratorConfig::set(const KeyValue& kv) {
  const std::string& k = kv.key;
  if (k == "input_size") input_size = parse_int(kv);
  else if (k == "base_channels") base_channels = parse_int(kv);
  else if (k == "channel_multiplier") channel_multiplier = parse_int(kv);
  else if (k == "encoder_depth") encoder_depth = parse_int(kv);
  else if (k == "use_ltl") use_ltl = parse_bool(kv);
  else if (k == "ltl_divisors") ltl_divisors = parse_int_list(kv);
  else if (k == "ltl_in_masked") ltl_in_masked = parse_bool(kv);
  else if (k == "ltl_attn_scale") ltl_attn_scale = parse_double(kv);
  else if (k == "use_ptl") use_ptl = parse_bool(kv);
  else if (k == "ptl_divisor") ptl_divisor = parse_int(kv);
  else if (k == "ptl_patch_divisor") ptl_patch_divisor = parse_int(kv);
  else if (k == "ptl_stride_divisor") ptl_stride_divisor = parse_int(kv);
  else if (k == "ptl_attn_scale") ptl_attn_scale = parse_double(kv);
  else if (k == "leaky_slope") leaky_slope = parse_double(kv);
  else if (k == "norm_eps") norm_eps = parse_double(kv);
  else if (k == "seed") seed = static_cast<std::uint64_t>(parse_int(kv));
  else if (k == "reconstruction") {
    if (kv.value == "residual") reconstruction = Reconstruction::kResidual;
    else if (kv.value == "direct") reconstruction = Reconstruction::kDirect;
    else throw ConfigError("line " + std::to_string(kv.line) + ": reconstruction must be residual or direct");
  } else {
    return false;
  }
  return true;
}

void GeneratorConfig::validate() const {
  if (input_size <= 0 || input_size % 32 != 0) {
    throw ConfigError("input_size must be a positive multiple of 32, got " + std::to_string(input_size));
  }
  if (base_channels < 1 || channel_multiplier < 1) throw ConfigError("channel widths must be >= 1");
  if (encoder_depth < 0 || encoder_depth > 16 || (input_size >> depth()) < 1 || input_size % (1 << depth()) != 0) {
    throw ConfigError("encoder_depth " + std::to_string(encoder_depth) + " does not fit input_size " +
                      std::to_string(input_size));
  }
  const int deepest = 1 << depth();
  auto check_divisor = [&](const char* key, int d) {
    if (!power_of_two(d) || d > deepest) {
      throw ConfigError(std::string(key) + " " + std::to_string(d) +
                        " is not a decoder resolution (powers of two up to " + std::to_string(deepest) + ")");
    }
  };
  if (use_ltl) {
    if (ltl_divisors.empty()) throw ConfigError("use_ltl is set but ltl_divisors is empty");
    std::vector<int> seen;
    for (int d : ltl_divisors) {
      check_divisor("ltl_divisors entry", d);
      if (std::find(seen.begin(), seen.end(), d) != seen.end()) throw ConfigError("ltl_divisors repeats " + std::to_string(d));
      seen.push_back(d);
    }
  }
  if (use_ptl) {
    check_divisor("ptl_divisor", ptl_divisor);
    if (ptl_patch_divisor < 1 || ptl_stride_divisor < 1) throw ConfigError("ptl patch/stride divisors must be >= 1");
  }
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ConfigError("leaky_slope must lie in [0, 1)");
  if (!(norm_eps > 0.0)) throw ConfigError("norm_eps must be positive");
}

std::string GeneratorConfig::to_text() const {
  std::ostringstream out;
  out << "input_size = " << input_size << "\n"
      << "base_channels = " << base_channels << "\n"
      << "channel_multiplier = " << channel_multiplier << "\n"
      << "encoder_depth = " << encoder_depth << "\n"
      << "use_ltl = " << (use_ltl ? "true" : "false") << "\n"
      << "ltl_divisors = " << join(ltl_divisors) << "\n"
      << "ltl_in_masked = " << (ltl_in_masked ? "true" : "false") << "\n"
      << "ltl_attn_scale = " << format_double(ltl_attn_scale) << "\n"
      << "use_ptl = " << (use_ptl ? "true" : "false") << "\n"
      << "ptl_divisor = " << ptl_divisor << "\n"
      << "ptl_patch_divisor = " << ptl_patch_divisor << "\n"
      << "ptl_stride_divisor = " << ptl_stride_divisor << "\n"
      << "ptl_attn_scale = " << format_double(ptl_attn_scale) << "\n"
      << "reconstruction = " << (reconstruction == Reconstruction::kResidual ? "residual" : "direct") << "\n"
      << "leaky_slope = " << format_double(leaky_slope) << "\n"
      << "norm_eps = " << format_double(norm_eps) << "\n"
      << "seed = " << seed << "\n";
  return out.str();
}

GeneratorConfig GeneratorConfig::from_text(std::string_view text) {
  GeneratorConfig config;
  for (const KeyValue& kv : parse_key_values(text)) {
    if (!config.set(kv)) throw ConfigError("line " + std::to_string(kv.line) + ": unknown key " + kv.key);
  }
  config.validate();
  return config;
}

int GeneratorConfig::depth() const {
  if (encoder_depth > 0) return encoder_depth;
  int d = 0;
  while (input_size % (2 << d) == 0 && (input_size >> (d + 1)) >= 8) ++d;
  return d;
}

int GeneratorConfig::channels_at(int level) const { return base_channels * channel_multiplier << level; }

// --- composition -----------------------------------------------------------------

template <typename Real>
void require_binary_mask(const Tensor<Real>& mask) {
  for (const Real v : mask.values()) {
    if (v != Real(0) && v != Real(1)) throw ArgumentError("mask must be binary (0 or 1)");
  }
}

template <typename Real>
Tensor<Real> compose_residual(const Tensor<Real>& image, const Tensor<Real>& residual,
                              const Tensor<Real>& mask) {
  const Shape s = image.shape();
  require_compose_shapes("compose_residual", s, residual.shape(), mask.shape());
  require_binary_mask(mask);
  Tensor<Real> out = image.clone();
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  for (int n = 0; n < s.n; ++n) {
    const Real* m = mask.data() + n * plane;
    for (int c = 0; c < s.c; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i)
        if (m[i] != Real(0)) out.data()[off + i] += residual.data()[off + i];
    }
  }
  if (detail::tracking<Real>({&image, &residual})) {
    detail::record(out, [image, residual, mask, out, s, plane]() mutable {
      if (!out.has_grad()) return;
      const Real* g = out.grad().data();
      if (image.requires_grad()) {
        Real* gi = image.grad_buffer().data();
        for (std::size_t i = 0; i < out.numel(); ++i) gi[i] += g[i];
      }
      if (residual.requires_grad()) {
        Real* gr = residual.grad_buffer().data();
        for (int n = 0; n < s.n; ++n) {
          const Real* m = mask.data() + n * plane;
          for (int c = 0; c < s.c; ++c) {
            const std::size_t off = (static_cast<std::size_t>(n) * s.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i)
              if (m[i] != Real(0)) gr[off + i] += g[off + i];
          }
        }
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> compose_direct(const Tensor<Real>& image, const Tensor<Real>& pred, const Tensor<Real>& mask) {
  const Shape s = image.shape();
  require_compose_shapes("compose_direct", s, pred.shape(), mask.shape());
  require_binary_mask(mask);
  Tensor<Real> out = image.clone();
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  for (int n = 0; n < s.n; ++n) {
    const Real* m = mask.data() + n * plane;
    for (int c = 0; c < s.c; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i)
        if (m[i] != Real(0)) out.data()[off + i] = pred.data()[off + i];
    }
  }
  if (detail::tracking<Real>({&image, &pred})) {
    detail::record(out, [image, pred, mask, out, s, plane]() mutable {
      if (!out.has_grad()) return;
      const Real* g = out.grad().data();
      Real* gi = image.requires_grad() ? image.grad_buffer().data() : nullptr;
      Real* gp = pred.requires_grad() ? pred.grad_buffer().data() : nullptr;
      for (int n = 0; n < s.n; ++n) {
        const Real* m = mask.data() + n * plane;
        for (int c = 0; c < s.c; ++c) {
          const std::size_t off = (static_cast<std::size_t>(n) * s.c + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            if (m[i] != Real(0)) {
              if (gp) gp[off + i] += g[off + i];
            } else if (gi) {
              gi[off + i] += g[off + i];
            }
          }
        }
      }
    });
  }
  return out;
}

// --- generator -------------------------------------------------------------------

template <typename Real>
Generator<Real>::Generator(const GeneratorConfig& config)
    : config_(config), params_(std::make_unique<ParamStore<Real>>()) {
  config_.validate();
  Rng rng(config_.seed);
  ParamStore<Real>& store = *params_;
  const int depth = config_.depth();
  auto block = [&](const std::string& name, int in, int out, int stride) {
    return Block{Conv2dLayer<Real>(store, name + ".conv", in, out, 3, stride, rng),
                 AffineInstanceNorm<Real>(store, name + ".norm", out)};
  };

  stem_ = block("stem", 4, config_.channels_at(0), 1);
  for (int l = 1; l <= depth; ++l)
    down_.push_back(block("down" + std::to_string(l), config_.channels_at(l - 1), config_.channels_at(l), 2));
  bottleneck_ = block("bottleneck", config_.channels_at(depth), config_.channels_at(depth), 1);
  for (int l = 0; l < depth; ++l)
    up_.push_back(block("up" + std::to_string(l), config_.channels_at(l + 1) + config_.channels_at(l),
                        config_.channels_at(l), 1));

  ltl_.resize(static_cast<std::size_t>(depth) + 1);
  if (config_.use_ltl) {
    LtlOptions opt;
    opt.attn_scale = config_.ltl_attn_scale;
    opt.masked_norm = config_.ltl_in_masked;
    opt.eps = config_.norm_eps;
    for (int d : config_.ltl_divisors) {
      const int l = level_of(d);
      ltl_[l] = std::make_unique<LtlModule<Real>>(store, "ltl" + std::to_string(l), config_.channels_at(l), rng, opt);
    }
  }
  if (config_.use_ptl) {
    PtlOptions opt;
    opt.patch_divisor = config_.ptl_patch_divisor;
    opt.stride_divisor = config_.ptl_stride_divisor;
    opt.attn_scale = config_.ptl_attn_scale;
    opt.eps = config_.norm_eps;
    ptl_level_ = level_of(config_.ptl_divisor);
    ptl_ = std::make_unique<PtlModule<Real>>(store, "ptl", config_.channels_at(ptl_level_),
                                             config_.input_size >> ptl_level_, rng, opt);
  }

  // A zero head makes the untrained network the identity harmonizer.
  head_ = Conv2dLayer<Real>(store, "head", config_.channels_at(0), 3, 3, 1, rng);
  Tensor<Real> head_weight = head_.weight();
  for (Real& v : head_weight.values()) v = Real(0);
}

template <typename Real>
Tensor<Real> Generator<Real>::run(const Block& block, const Tensor<Real>& x) const {
  return leaky_relu(block.norm(block.conv(x)), static_cast<Real>(config_.leaky_slope));
}

template <typename Real>
GeneratorOutput<Real> Generator<Real>::forward(const Tensor<Real>& image, const Tensor<Real>& mask,
                                               bool keep_traces) const {
  const int size = config_.input_size;
  const Shape si = image.shape();
  if (si.c != 3 || si.h != size || si.w != size) {
    throw DimensionError("generator: expected (n, 3, " + std::to_string(size) + ", " + std::to_string(size) +
                         ") image, got " + si.str());
  }
  if (mask.shape() != Shape{si.n, 1, size, size}) {
    throw DimensionError("generator: mask " + mask.shape().str() + " does not match image " + si.str());
  }
  require_binary_mask(mask);

  GeneratorOutput<Real> result;
  auto translate = [&](int level, Tensor<Real> d) {
    if (ltl_[level]) {
      LtlTrace<Real>* trace = nullptr;
      if (keep_traces) {
        result.ltl.emplace_back();
        result.ltl_sizes.push_back(d.h());
        trace = &result.ltl.back();
      }
      d = (*ltl_[level])(d, mask, trace);
    }
    if (ptl_ && level == ptl_level_) {
      d = (*ptl_)(d, mask, keep_traces ? &result.ptl : nullptr);
      result.ptl_size = d.h();
    }
    return d;
  };

  const int depth = config_.depth();
  std::vector<Tensor<Real>> skips;
  skips.push_back(run(stem_, concat_channels(image, mask)));
  for (int l = 1; l <= depth; ++l) skips.push_back(run(down_[l - 1], skips.back()));
  Tensor<Real> d = translate(depth, run(bottleneck_, skips.back()));
  for (int l = depth - 1; l >= 0; --l) d = translate(l, run(up_[l], concat_channels(upsample_nearest(d, 2), skips[l])));

  result.residual = head_(d);
  result.output = config_.reconstruction == Reconstruction::kResidual
                      ? compose_residual(image, result.residual, mask)
                      : compose_direct(image, result.residual, mask);
  return result;
}

// --- checkpoints -----------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'H', 'K', 'P', 'T'};
constexpr std::uint16_t kVersion = 1;

template <typename Int>
void put(std::string& out, Int v) {
  for (std::size_t i = 0; i < sizeof(Int); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename Int>
  Int get(const char* what) {
    need(sizeof(Int), what);
    Int v = 0;
    for (std::size_t i = 0; i < sizeof(Int); ++i)
      v |= static_cast<Int>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(Int);
    return v;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    const std::string_view s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  [[nodiscard]] bool done() const { return pos_ == bytes_.size(); }
  [[nodiscard]] std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw DecodeError(std::string("checkpoint truncated in ") + what, pos_);
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

template <typename Real>
std::string encode_checkpoint(const GeneratorConfig& config, const ParamStore<Real>& params) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint16_t>(out, kVersion);
  const std::string text = config.to_text();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for (const Parameter<Real>& p : params) {
    put<std::uint16_t>(out, static_cast<std::uint16_t>(p.name.size()));
    out += p.name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(p.dims.size()));
    for (int d : p.dims) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (const Real v : p.value.values()) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(4, "magic") != std::string_view(kMagic, 4)) throw DecodeError("not a checkpoint (bad magic)", 0);
  const auto version = in.get<std::uint16_t>("version");
  if (version != kVersion) throw DecodeError("unsupported checkpoint version " + std::to_string(version), 4);
  Checkpoint ckpt;
  const auto text_len = in.get<std::uint32_t>("config length");
  const std::size_t text_at = in.pos();
  try {
    ckpt.config = GeneratorConfig::from_text(in.take(text_len, "config block"));
  } catch (const ConfigError& e) {
    throw DecodeError(std::string("bad config block: ") + e.what(), text_at);
  }
  while (!in.done()) {
    CheckpointRecord rec;
    const auto name_len = in.get<std::uint16_t>("record name length");
    rec.name = std::string(in.take(name_len, "record name"));
    const std::size_t rank_at = in.pos();
    const auto rank = in.get<std::uint8_t>("record rank");
    if (rank < 1 || rank > 4) throw DecodeError("record " + rec.name + " has rank " + std::to_string(rank), rank_at);
    std::size_t count = 1;
    for (int i = 0; i < rank; ++i) {
      const auto d = in.get<std::uint32_t>("record dims");
      if (d == 0 || d > (1u << 30)) throw DecodeError("record " + rec.name + " has a bad extent", in.pos() - 4);
      rec.dims.push_back(static_cast<int>(d));
      count *= d;
      if (count > bytes.size()) throw DecodeError("record " + rec.name + " payload truncated", in.pos());
    }
    if (count > (bytes.size() - in.pos()) / 4) throw DecodeError("record " + rec.name + " payload truncated", in.pos());
    rec.values.resize(count);
    for (float& v : rec.values) v = std::bit_cast<float>(in.get<std::uint32_t>("record payload"));
    ckpt.records.push_back(std::move(rec));
  }
  return ckpt;
}

template <typename Real>
void save_checkpoint(const std::string& path, const GeneratorConfig& config, const ParamStore<Real>& params) {
  const std::string bytes = encode_checkpoint(config, params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing checkpoint " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_checkpoint(buf.str());
}

template <typename Real>
void load_parameters(const Checkpoint& checkpoint, ParamStore<Real>& params) {
  std::map<std::string, const CheckpointRecord*> by_name;
  for (const CheckpointRecord& r : checkpoint.records) by_name[r.name] = &r;
  if (by_name.size() != params.size() || checkpoint.records.size() != params.size()) {
    throw ArgumentError("checkpoint holds " + std::to_string(checkpoint.records.size()) +
                        " parameters, model expects " + std::to_string(params.size()));
  }
  for (Parameter<Real>& p : params) {
    const auto it = by_name.find(p.name);
    if (it == by_name.end()) throw ArgumentError("checkpoint lacks parameter " + p.name);
    if (it->second->dims != p.dims) throw ArgumentError("checkpoint extent mismatch for " + p.name);
    Real* dst = p.value.data();
    for (std::size_t i = 0; i < it->second->values.size(); ++i) dst[i] = static_cast<Real>(it->second->values[i]);
  }
}

template <typename Real>
Generator<Real> load_generator(const std::string& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  Generator<Real> gen(ckpt.config);
  load_parameters(ckpt, gen.params());
  return gen;
}

#define HARMONY_INSTANTIATE(Real)                                                                       \
  template void require_binary_mask(const Tensor<Real>&);                                               \
  template Tensor<Real> compose_residual(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&); \
  template Tensor<Real> compose_direct(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&);   \
  template class Generator<Real>;                                                                       \
  template std::string encode_checkpoint(const GeneratorConfig&, const ParamStore<Real>&);              \
  template void save_checkpoint(const std::string&, const GeneratorConfig&, const ParamStore<Real>&);    \
  template void load_parameters(const Checkpoint&, ParamStore<Real>&);                                  \
  template Generator<Real> load_generator(const std::string&);

HARMONY_INSTANTIATE(float)
HARMONY_INSTANTIATE(double)
#undef HARMONY_INSTANTIATE

}  // namespace harmony
