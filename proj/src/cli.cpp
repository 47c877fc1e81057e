// Copyright 2026 The Harmony Authors
// SPDX-License-Identifier: Apache-2.0

#include "harmony/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "harmony/config.hpp"
#include "harmony/keyvalue.hpp"

namespace harmony {

namespace fs = std::filesystem;

namespace {

// Maps library exceptions onto exit codes.
template <typename Fn>
int guarded(std::ostream& err, Fn&& body) {
  try {
    return body();
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DecodeError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ArgumentError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DimensionError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const EmptyRegionError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

void make_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
}

nlohmann::ordered_json metrics_json(const MetricsReport& m) {
  nlohmann::ordered_json j;
  if (std::isinf(m.psnr)) {
    j["psnr"] = "inf";
  } else {
    j["psnr"] = m.psnr;
  }
  j["mse"] = m.mse;
  j["fmse"] = m.fmse;
  return j;
}

std::string fixed(double v, int digits = 3) {
  if (std::isinf(v)) return "inf";
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

struct ImagePair {
  Tensor<float> image;
  Tensor<float> mask;
};

// Loads composite and mask and checks both against the generator input.
ImagePair load_input(const std::string& composite, const std::string& mask, int size) {
  ImagePair p{load_image(composite), load_mask(mask)};
  if (p.image.h() != p.mask.h() || p.image.w() != p.mask.w())
    throw ArgumentError("size mismatch: image " + std::to_string(p.image.h()) + "x" + std::to_string(p.image.w()) +
                        ", mask " + std::to_string(p.mask.h()) + "x" + std::to_string(p.mask.w()));
  if (p.image.h() != size || p.image.w() != size)
    throw ArgumentError("size mismatch: the checkpoint expects " + std::to_string(size) + "x" +
                        std::to_string(size) + " inputs, got " + std::to_string(p.image.h()) + "x" +
                        std::to_string(p.image.w()));
  return p;
}

std::vector<CompositeSample> training_samples(const RunConfig& c) {
  std::vector<CompositeSample> samples;
  if (!c.train_manifest.empty() || !c.train_dir.empty()) {
    const auto entries = !c.train_manifest.empty() ? read_manifest(c.train_manifest) : scan_triplet_directory(c.train_dir);
    for (const auto& e : entries) samples.push_back(load_sample(e, c.perturbation));
  } else {
    for (int i = 0; i < c.synthetic_count; ++i)
      samples.push_back(synthetic_sample(c.generator.input_size,
                                         derive_seed(c.synthetic_seed, static_cast<std::uint64_t>(i)), c.perturbation));
  }
  if (samples.empty()) throw ArgumentError("no training samples");
  return samples;
}

// Min-max over background pixels; foreground and uncovered extremes follow.
Tensor<float> normalize_on_background(const Tensor<float>& map, const Tensor<float>& mask) {
  float lo = std::numeric_limits<float>::infinity(), hi = -lo;
  for (std::size_t i = 0; i < map.numel(); ++i)
    if (mask.data()[i] == 0.0f) lo = std::min(lo, map.data()[i]), hi = std::max(hi, map.data()[i]);
  Tensor<float> out(map.shape());
  for (std::size_t i = 0; i < map.numel(); ++i) {
    if (mask.data()[i] != 0.0f) continue;
    out.data()[i] = hi > lo ? (map.data()[i] - lo) / (hi - lo) : (hi > 0.0f ? 1.0f : 0.0f);
  }
  return out;
}

Tensor<float> upsample_to(const Tensor<float>& map, int size) {
  const int f = size / map.h();
  Tensor<float> out(Shape{1, 1, size, size});
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) out.at(0, 0, y, x) = map.at(0, 0, y / f, x / f);
  return out;
}

Tensor<float> overlay(const Tensor<float>& image, const Tensor<float>& heat) {
  constexpr float kAlpha = 0.6f;
  Tensor<float> out = image.clone();
  for (int y = 0; y < image.h(); ++y)
    for (int x = 0; x < image.w(); ++x) {
      const float a = kAlpha * heat.at(0, 0, y, x);
      for (int c = 0; c < 3; ++c) out.at(0, c, y, x) = (1.0f - a) * image.at(0, c, y, x) + (c == 0 ? a : 0.0f);
    }
  return out;
}

}  // namespace

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    RunConfig c = load_run_config(args.config_path);
    if (args.seed) c.set_seed(*args.seed);
    if (!args.out_dir.empty()) c.output_dir = args.out_dir;
    if (args.quantize_metrics) c.train.quantize_metrics = true;
    c.validate();
    const std::vector<CompositeSample> samples = training_samples(c);

    make_dir(c.output_dir);
    c.train.checkpoint_path =
        args.checkpoint_path.empty() ? (fs::path(c.output_dir) / "model.hkpt").string() : args.checkpoint_path;
    c.train.log_path = (fs::path(c.output_dir) / "train_log.jsonl").string();
    write_file((fs::path(c.output_dir) / "run.cfg").string(), c.to_text());

    Generator<float> generator(c.generator);
    const TrainResult r = train(generator, samples, c.train);
    out << "samples " << samples.size() << ", steps " << r.steps << ", epochs " << r.epochs.size() << "\n"
        << "output     psnr " << fixed(r.final_metrics.psnr) << "  mse " << fixed(r.final_metrics.mse)
        << "  fmse " << fixed(r.final_metrics.fmse) << "\n"
        << "composite  psnr " << fixed(r.baseline_metrics.psnr) << "  mse " << fixed(r.baseline_metrics.mse)
        << "  fmse " << fixed(r.baseline_metrics.fmse) << "\n"
        << "checkpoint " << c.train.checkpoint_path << "\n";
    if (r.halted) {
      err << "training halted: " << r.halt_reason << "\n";
      return kExitNumeric;
    }
    return kExitOk;
  });
}

int cmd_harmonize(const HarmonizeArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const Generator<float> generator = load_generator<float>(args.checkpoint_path);
    const ImagePair in = load_input(args.composite_path, args.mask_path, generator.config().input_size);
    NoGradScope<float> no_grad;
    save_image(args.out_path, generator.forward(in.image, in.mask).output);
    out << "wrote " << args.out_path << "\n";
    return kExitOk;
  });
}

int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const PerturbationRanges ranges =
        args.config_path.empty() ? PerturbationRanges{} : load_run_config(args.config_path).perturbation;
    const auto entries = read_manifest(args.manifest_path);
    if (entries.empty()) throw ArgumentError("manifest " + args.manifest_path + " has no samples");
    std::optional<Generator<float>> generator;
    if (!args.checkpoint_path.empty()) generator.emplace(load_generator<float>(args.checkpoint_path));

    NoGradScope<float> no_grad;
    std::vector<MetricsReport> model, composite;
    nlohmann::ordered_json samples = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const CompositeSample s = load_sample(entries[i], ranges);
      Tensor<float> pred = s.composite;
      if (generator) {
        const int size = generator->config().input_size;
        if (s.composite.h() != size || s.composite.w() != size)
          throw ArgumentError("size mismatch: sample " + std::to_string(i) + " is not " + std::to_string(size) +
                              "x" + std::to_string(size));
        pred = generator->forward(s.composite, s.mask).output;
      }
      model.push_back(compute_metrics(pred, s.gt, s.mask, args.quantize_metrics));
      composite.push_back(compute_metrics(s.composite, s.gt, s.mask, args.quantize_metrics));
      nlohmann::ordered_json row;
      row["index"] = i;
      row["gt_path"] = entries[i].gt_path;
      row["metrics"] = metrics_json(model.back());
      row["composite"] = metrics_json(composite.back());
      samples.push_back(row);
    }
    const MetricsReport mean = mean_metrics(model);
    const MetricsReport base = mean_metrics(composite);

    out << std::left << std::setw(8) << "sample" << std::right << std::setw(12) << "psnr" << std::setw(14) << "mse"
        << std::setw(14) << "fmse" << std::setw(16) << "composite_psnr" << "\n";
    auto line = [&](const std::string& label, const MetricsReport& m, const MetricsReport& b) {
      out << std::left << std::setw(8) << label << std::right << std::setw(12) << fixed(m.psnr) << std::setw(14)
          << fixed(m.mse) << std::setw(14) << fixed(m.fmse) << std::setw(16) << fixed(b.psnr) << "\n";
    };
    for (std::size_t i = 0; i < model.size(); ++i) line(std::to_string(i), model[i], composite[i]);
    line("mean", mean, base);

    nlohmann::ordered_json report;
    report["samples"] = samples;
    report["mean"] = metrics_json(mean);
    report["composite_mean"] = metrics_json(base);
    report["quantized"] = args.quantize_metrics;
    if (args.json_path.empty()) {
      out << report.dump() << "\n";
    } else {
      write_file(args.json_path, report.dump(2) + "\n");
    }
    return kExitOk;
  });
}

int cmd_attnmap(const AttnMapArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const Generator<float> generator = load_generator<float>(args.checkpoint_path);
    const GeneratorConfig& config = generator.config();
    if (!config.use_ptl) throw ArgumentError("the checkpoint has no PTL module");
    const int size = config.input_size;
    const ImagePair in = load_input(args.composite_path, args.mask_path, size);
    if (mask_coverage(in.mask) == 0.0) throw EmptyRegionError("the mask has no foreground");

    NoGradScope<float> no_grad;
    const GeneratorOutput<float> result = generator.forward(in.image, in.mask, true);
    make_dir(args.out_dir);

    const Tensor<float> heat =
        normalize_on_background(upsample_to(result.ptl.contribution.at(0), size), in.mask);
    write_file((fs::path(args.out_dir) / "contribution.png").string(), encode_png(heat));
    save_image((fs::path(args.out_dir) / "overlay.png").string(), overlay(in.image, heat));
    out << "wrote " << (fs::path(args.out_dir) / "contribution.png").string() << "\n";

    if (args.ltl_pixel) {
      if (result.ltl.empty()) throw ArgumentError("the checkpoint has no LTL module");
      const int grid = result.ltl_sizes.front();
      const auto [row, col] = *args.ltl_pixel;
      if (row < 0 || col < 0 || row >= size || col >= size) throw ArgumentError("LTL pixel outside the image");
      const int location = (row * grid / size) * grid + col * grid / size;
      const TokenSplit& split = result.ltl.front().splits.at(0);
      const auto it = std::find(split.fg_index.begin(), split.fg_index.end(), location);
      if (it == split.fg_index.end() || !result.ltl.front().attention.at(0).defined())
        throw ArgumentError("pixel (" + std::to_string(row) + ", " + std::to_string(col) +
                            ") is not a foreground location with background to attend to");
      const Tensor<float>& attention = result.ltl.front().attention[0];
      const int r = static_cast<int>(it - split.fg_index.begin());
      Tensor<float> map(Shape{1, 1, grid, grid});
      for (std::size_t j = 0; j < split.bg_index.size(); ++j)
        map.data()[split.bg_index[j]] = attention.at(0, 0, r, static_cast<int>(j));
      const Tensor<float> ltl_heat = normalize_on_background(upsample_to(map, size), in.mask);
      write_file((fs::path(args.out_dir) / "ltl_attention.png").string(), encode_png(ltl_heat));
      out << "wrote " << (fs::path(args.out_dir) / "ltl_attention.png").string() << "\n";
    }
    return kExitOk;
  });
}

int cmd_synth(const SynthArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const PerturbationRanges ranges =
        args.config_path.empty() ? PerturbationRanges{} : load_run_config(args.config_path).perturbation;
    out << "wrote " << write_synthetic_dataset(args.out_dir, args.count, args.size, args.seed, ranges) << "\n";
    return kExitOk;
  });
}

}  // namespace harmony
