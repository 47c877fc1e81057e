// Copyright 2026 The Harmony Authors
// SPDX-License-Identifier: Apache-2.0

#include "harmony/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <exception>
#include <fstream>
#include <json.hpp>
#include <mutex>
#include <numeric>
#include <optional>
#include <thread>

#include "harmony/keyvalue.hpp"
#include "harmony/log.hpp"
#include "op_support.hpp"

namespace harmony {

// --- loss ------------------------------------------------------------------------

template <typename Real>
Tensor<Real> foreground_mse_loss(const Tensor<Real>& pred, const Tensor<Real>& target, const Tensor<Real>& mask,
                                 double area_floor) {
  if (pred.shape() != target.shape())
    throw DimensionError("foreground_mse_loss: pred " + pred.shape().str() + " vs target " + target.shape().str());
  const Shape& s = pred.shape();
  if (mask.shape() != Shape{s.n, 1, s.h, s.w})
    throw DimensionError("foreground_mse_loss: mask " + mask.shape().str() + " does not match " + s.str());
  if (!(area_floor > 0.0)) throw ArgumentError("foreground_mse_loss: area floor must be positive");

  const std::size_t plane = static_cast<std::size_t>(s.plane());
  const std::size_t sample = plane * s.c;
  std::vector<double> weight(s.n);
  for (int n = 0; n < s.n; ++n) {
    double area = 0.0;
    for (std::size_t i = 0; i < plane; ++i) area += mask.data()[n * plane + i];
    weight[n] = 1.0 / (s.n * std::max(area_floor, area));
  }
  double total = 0.0;
  for (int n = 0; n < s.n; ++n) {
    double acc = 0.0;
    for (std::size_t i = n * sample; i < (n + 1) * sample; ++i) {
      const double d = double{pred.data()[i]} - target.data()[i];
      acc += d * d;
    }
    total += weight[n] * acc;
  }
  Tensor<Real> out = Tensor<Real>::scalar(static_cast<Real>(total));
  if (detail::tracking<Real>({&pred, &target})) {
    detail::record(out, [pred, target, out, weight, sample] {
      const double g = out.grad()[0];
      Real* gp = pred.requires_grad() ? pred.grad_buffer().data() : nullptr;
      Real* gt = target.requires_grad() ? target.grad_buffer().data() : nullptr;
      for (std::size_t i = 0; i < pred.numel(); ++i) {
        const double d = 2.0 * g * weight[i / sample] * (double{pred.data()[i]} - target.data()[i]);
        if (gp) gp[i] += static_cast<Real>(d);
        if (gt) gt[i] -= static_cast<Real>(d);
      }
    });
  }
  return out;
}

template Tensor<float> foreground_mse_loss(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&, double);
template Tensor<double> foreground_mse_loss(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                            double);

// --- Adam ------------------------------------------------------------------------

template <typename Real>
Adam<Real>::Adam(ParamStore<Real>& params, const AdamOptions& options) : params_(&params), options_(options) {
  if (!(options.lr > 0.0) || !(options.eps > 0.0) || options.beta1 < 0.0 || options.beta1 >= 1.0 ||
      options.beta2 < 0.0 || options.beta2 >= 1.0)
    throw ArgumentError("Adam: lr and eps must be positive, betas in [0, 1)");
  for (const auto& p : params) {
    m_.emplace_back(p.value.numel(), 0.0);
    v_.emplace_back(p.value.numel(), 0.0);
  }
}

template <typename Real>
void Adam<Real>::step(double lr_factor) {
  ParamStore<Real>& params = *params_;
  if (params.size() != m_.size()) throw ArgumentError("Adam: parameter store changed size");
  for (const auto& p : params) {
    if (!p.value.has_grad()) continue;
    const auto g = p.value.grad();
    const auto bad = std::find_if(g.begin(), g.end(), [](Real x) { return !std::isfinite(x); });
    if (bad != g.end())
      throw NumericError("non-finite gradient in " + p.name + " at element " +
                         std::to_string(bad - g.begin()) + " (step " + std::to_string(t_ + 1) + ")");
  }
  ++t_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double lr = options_.lr * lr_factor;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<Real>& value = params[k].value;
    const bool has = value.has_grad();
    Real* w = value.data();
    std::vector<double>& m = m_[k];
    std::vector<double>& v = v_[k];
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double g = has ? double{value.grad()[i]} : 0.0;
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      const double update = lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + options_.eps);
      w[i] = static_cast<Real>(w[i] - update);
    }
  }
}

template class Adam<float>;
template class Adam<double>;

void Schedule::validate() const {
  if (total_epochs < 0) throw ConfigError("epochs must be non-negative");
  if (decay_epoch < 0) throw ConfigError("decay_epoch must be non-negative");
  if (total_epochs > 0 && decay_epoch >= total_epochs)
    throw ConfigError("decay_epoch (" + std::to_string(decay_epoch) + ") must be below epochs (" +
                      std::to_string(total_epochs) + ")");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw ConfigError("decay_factor must be in (0, 1]");
}

// --- metrics -------------------------------------------------------------------

double psnr_from_mse(double mse) {
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

std::string format_psnr(double psnr) { return std::isinf(psnr) && psnr > 0 ? "inf" : format_double(psnr); }

namespace {

struct ErrorSums {
  double all = 0.0;
  double fg = 0.0;
  std::size_t fg_pixels = 0;
  std::size_t pixels = 0;
};

ErrorSums error_sums(const Tensor<float>& pred, const Tensor<float>& gt, const Tensor<float>& mask, bool quantize) {
  if (pred.shape() != gt.shape() || pred.n() != 1 || pred.c() != 3)
    throw DimensionError("metrics: pred " + pred.shape().str() + " and gt " + gt.shape().str() +
                         " must both be (1, 3, h, w)");
  if (mask.shape() != Shape{1, 1, pred.h(), pred.w()})
    throw DimensionError("metrics: mask " + mask.shape().str() + " does not match " + pred.shape().str());
  auto level = [quantize](float v) {
    return quantize ? static_cast<double>(quantize_unit(v)) : static_cast<double>(v) * 255.0;
  };
  ErrorSums s;
  const std::size_t plane = static_cast<std::size_t>(pred.shape().plane());
  s.pixels = plane;
  for (std::size_t i = 0; i < plane; ++i) {
    const bool fg = mask.data()[i] >= 0.5f;
    s.fg_pixels += fg;
    for (int c = 0; c < 3; ++c) {
      const double d = level(pred.data()[c * plane + i]) - level(gt.data()[c * plane + i]);
      s.all += d * d;
      if (fg) s.fg += d * d;
    }
  }
  return s;
}

}  // namespace

MetricsReport compute_metrics(const Tensor<float>& pred, const Tensor<float>& gt, const Tensor<float>& mask,
                              bool quantize) {
  const ErrorSums s = error_sums(pred, gt, mask, quantize);
  if (s.fg_pixels == 0) throw EmptyRegionError("metrics: fMSE is undefined for an empty mask");
  MetricsReport r;
  r.mse = s.all / (3.0 * static_cast<double>(s.pixels));
  r.fmse = s.fg / (3.0 * static_cast<double>(s.fg_pixels));
  r.psnr = psnr_from_mse(r.mse);
  return r;
}

MetricsReport mean_metrics(std::span<const MetricsReport> reports) {
  MetricsReport mean;
  if (reports.empty()) return mean;
  for (const auto& r : reports) {
    mean.psnr += r.psnr;
    mean.mse += r.mse;
    mean.fmse += r.fmse;
  }
  const double n = static_cast<double>(reports.size());
  mean.psnr /= n;
  mean.mse /= n;
  mean.fmse /= n;
  return mean;
}

std::string format_epoch_log(const EpochLog& log) {
  nlohmann::ordered_json j;
  j["epoch"] = log.epoch;
  j["lr"] = log.lr;
  j["loss"] = log.loss;
  if (std::isinf(log.metrics.psnr)) {
    j["psnr"] = "inf";
  } else {
    j["psnr"] = log.metrics.psnr;
  }
  j["mse"] = log.metrics.mse;
  j["fmse"] = log.metrics.fmse;
  j["wall_ms"] = log.wall_ms;
  return j.dump();
}

// --- samples -------------------------------------------------------------------

namespace {

// Nearest resampling with source index floor((i + 0.5) * in / out).
Tensor<float> resize_nearest(const Tensor<float>& x, int h, int w) {
  if (x.h() == h && x.w() == w) return x.clone();
  Tensor<float> out(Shape{x.n(), x.c(), h, w});
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c)
      for (int y = 0; y < h; ++y) {
        const int sy = std::min(x.h() - 1, static_cast<int>((y + 0.5) * x.h() / h));
        for (int xx = 0; xx < w; ++xx) {
          const int sx = std::min(x.w() - 1, static_cast<int>((xx + 0.5) * x.w() / w));
          out.at(n, c, y, xx) = x.at(n, c, sy, sx);
        }
      }
  return out;
}

Tensor<float> crop(const Tensor<float>& x, int top, int left, int size, bool flip) {
  Tensor<float> out(Shape{x.n(), x.c(), size, size});
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c)
      for (int y = 0; y < size; ++y)
        for (int xx = 0; xx < size; ++xx)
          out.at(n, c, y, xx) = x.at(n, c, top + y, left + (flip ? size - 1 - xx : xx));
  return out;
}

}  // namespace

CompositeSample fit_sample(const CompositeSample& s, int size) {
  return {resize_nearest(s.composite, size, size), resize_nearest(s.mask, size, size),
          resize_nearest(s.gt, size, size)};
}

CompositeSample augment_sample(const CompositeSample& s, int size, double resize_factor, double flip_probability,
                               std::mt19937_64& rng) {
  const int big = std::max(size, static_cast<int>(std::lround(resize_factor * size)));
  const int top = std::uniform_int_distribution<int>(0, big - size)(rng);
  const int left = std::uniform_int_distribution<int>(0, big - size)(rng);
  const bool flip = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < flip_probability;
  auto view = [&](const Tensor<float>& t) { return crop(resize_nearest(t, big, big), top, left, size, flip); };
  return {view(s.composite), view(s.mask), view(s.gt)};
}

MetricsReport evaluate(const Generator<float>& generator, std::span<const CompositeSample> samples, bool quantize,
                       MetricsReport* baseline) {
  NoGradScope<float> no_grad;
  const int size = generator.config().input_size;
  std::vector<MetricsReport> out, base;
  for (const auto& raw : samples) {
    const CompositeSample s = fit_sample(raw, size);
    const Tensor<float> pred = generator.forward(s.composite, s.mask).output;
    out.push_back(compute_metrics(pred, s.gt, s.mask, quantize));
    if (baseline) base.push_back(compute_metrics(s.composite, s.gt, s.mask, quantize));
  }
  if (baseline) *baseline = mean_metrics(base);
  return mean_metrics(out);
}

// --- training loop -------------------------------------------------------------

void TrainOptions::validate() const {
  schedule.validate();
  if (!(adam.lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0))
    throw ConfigError("betas must be in [0, 1)");
  if (!(adam.eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(area_floor > 0.0)) throw ConfigError("area_floor must be positive");
  if (!(resize_factor >= 1.0)) throw ConfigError("resize_factor must be at least 1");
  if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) throw ConfigError("flip_probability must be in [0, 1]");
  if (max_steps < 0) throw ConfigError("max_steps must be non-negative");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be non-negative");
  if (prefetch_depth < 1) throw ConfigError("prefetch_depth must be at least 1");
}

namespace {

struct Batch {
  Tensor<float> composite;
  Tensor<float> mask;
  Tensor<float> gt;
  int epoch = 0;
  bool closes_epoch = false;
};

// Single producer, single consumer, fixed capacity. The producer's failure
// travels through the queue as an exception.
class BatchQueue {
 public:
  explicit BatchQueue(std::size_t capacity) : capacity_(capacity) {}

  bool push(Batch batch) {
    std::unique_lock lock(mutex_);
    not_full_.wait(lock, [&] { return items_.size() < capacity_ || cancelled_; });
    if (cancelled_) return false;
    items_.push_back(std::move(batch));
    not_empty_.notify_one();
    return true;
  }

  void finish(std::exception_ptr error = nullptr) {
    std::lock_guard lock(mutex_);
    finished_ = true;
    error_ = error;
    not_empty_.notify_one();
  }

  void cancel() {
    std::lock_guard lock(mutex_);
    cancelled_ = true;
    not_full_.notify_one();
  }

  std::optional<Batch> pop() {
    std::unique_lock lock(mutex_);
    not_empty_.wait(lock, [&] { return !items_.empty() || finished_; });
    if (items_.empty()) {
      if (error_) std::rethrow_exception(error_);
      return std::nullopt;
    }
    Batch b = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return b;
  }

 private:
  std::mutex mutex_;
  std::condition_variable not_full_;
  std::condition_variable not_empty_;
  std::deque<Batch> items_;
  std::size_t capacity_;
  bool finished_ = false;
  bool cancelled_ = false;
  std::exception_ptr error_;
};

// Stream seeds, fixed so a run is reproducible from TrainOptions::seed.
constexpr std::uint64_t kShuffleStream = 1;
constexpr std::uint64_t kAugmentStream = 2;

Tensor<float> stack(const std::vector<const Tensor<float>*>& parts) {
  const Shape one = parts.front()->shape();
  Tensor<float> out(Shape{static_cast<int>(parts.size()), one.c, one.h, one.w});
  for (std::size_t i = 0; i < parts.size(); ++i)
    std::copy(parts[i]->values().begin(), parts[i]->values().end(), out.data() + i * one.numel());
  return out;
}

Tensor<float> slice(const Tensor<float>& x, int n) {
  const Shape s{1, x.c(), x.h(), x.w()};
  const auto begin = x.values().begin() + static_cast<std::ptrdiff_t>(n * s.numel());
  return Tensor<float>(s, std::vector<float>(begin, begin + static_cast<std::ptrdiff_t>(s.numel())));
}

void produce(BatchQueue& queue, std::span<const CompositeSample> samples, const TrainOptions& opt, int size) {
  const std::size_t count = samples.size();
  const std::size_t per_epoch = (count + opt.batch_size - 1) / opt.batch_size;
  std::int64_t produced = 0;
  std::uint64_t drawn = 0;
  std::vector<std::size_t> order(count);
  for (int epoch = 0; epoch < opt.schedule.total_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(derive_seed(derive_seed(opt.seed, kShuffleStream), static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t b = 0; b < per_epoch; ++b) {
      std::vector<CompositeSample> parts;
      for (std::size_t i = b * opt.batch_size; i < std::min(count, (b + 1) * opt.batch_size); ++i) {
        const CompositeSample& raw = samples[order[i]];
        if (opt.augment) {
          std::mt19937_64 rng(derive_seed(derive_seed(opt.seed, kAugmentStream), drawn++));
          parts.push_back(augment_sample(raw, size, opt.resize_factor, opt.flip_probability, rng));
        } else {
          parts.push_back(fit_sample(raw, size));
        }
      }
      std::vector<const Tensor<float>*> comp, mask, gt;
      for (const auto& p : parts) {
        comp.push_back(&p.composite);
        mask.push_back(&p.mask);
        gt.push_back(&p.gt);
      }
      ++produced;
      const bool capped = opt.max_steps > 0 && produced >= opt.max_steps;
      Batch batch{stack(comp), stack(mask), stack(gt), epoch, b + 1 == per_epoch || capped};
      if (!queue.push(std::move(batch)) || capped) return;
    }
  }
}

template <typename Real>
std::vector<std::vector<Real>> snapshot(const ParamStore<Real>& params) {
  std::vector<std::vector<Real>> out;
  for (const auto& p : params) out.emplace_back(p.value.values().begin(), p.value.values().end());
  return out;
}

template <typename Real>
void restore(ParamStore<Real>& params, const std::vector<std::vector<Real>>& saved) {
  for (std::size_t k = 0; k < params.size(); ++k)
    std::copy(saved[k].begin(), saved[k].end(), params[k].value.values().begin());
}

}  // namespace

TrainResult train(Generator<float>& generator, std::span<const CompositeSample> samples, const TrainOptions& opt) {
  opt.validate();
  if (samples.empty()) throw ArgumentError("train: no samples");
  const int size = generator.config().input_size;

  std::ofstream log_file;
  if (!opt.log_path.empty()) {
    log_file.open(opt.log_path, std::ios::trunc);
    if (!log_file) throw IoError("cannot write " + opt.log_path);
  }

  ParamStore<float>& params = generator.params();
  Adam<float> adam(params, opt.adam);
  TrainResult result;
  // Values before the latest update: the last ones whose loss was seen
  // finite. A non-finite loss rolls back to them.
  std::vector<std::vector<float>> before_update = snapshot(params);

  BatchQueue queue(static_cast<std::size_t>(opt.prefetch_depth));
  std::jthread producer([&] {
    try {
      produce(queue, samples, opt, size);
      queue.finish();
    } catch (...) {
      queue.finish(std::current_exception());
    }
  });
  // Unblocks the producer if the loop below exits by exception.
  struct CancelOnExit {
    BatchQueue& queue;
    ~CancelOnExit() { queue.cancel(); }
  } cancel_on_exit{queue};

  using Clock = std::chrono::steady_clock;
  auto epoch_start = Clock::now();
  double loss_sum = 0.0;
  int loss_count = 0;
  double psnr_sum = 0.0, mse_sum = 0.0, fmse_sum = 0.0;
  int seen = 0, seen_fg = 0;

  while (std::optional<Batch> batch = queue.pop()) {
    const double factor = opt.schedule.factor(batch->epoch);
    params.zero_grad();
    Tensor<float> output;
    double loss_value = 0.0;
    {
      GradTape<float> tape;
      output = generator.forward(batch->composite, batch->mask).output;
      Tensor<float> loss = foreground_mse_loss(output, batch->gt, batch->mask, opt.area_floor);
      loss_value = loss.item();
      if (std::isfinite(loss_value)) tape.backward(loss);
    }
    std::string failure;
    if (!std::isfinite(loss_value)) {
      failure = "non-finite loss at step " + std::to_string(result.steps + 1);
      restore(params, before_update);
    } else {
      // Adam throws before touching anything, so a bad gradient leaves the
      // current (finite-loss) values in place.
      try {
        std::vector<std::vector<float>> current = snapshot(params);
        adam.step(factor);
        before_update = std::move(current);
      } catch (const NumericError& e) {
        failure = e.what();
      }
    }
    if (!failure.empty()) {
      result.halted = true;
      result.halt_reason = failure;
      log::error("training halted: " + failure);
      break;
    }
    ++result.steps;
    loss_sum += loss_value;
    ++loss_count;
    for (int n = 0; n < output.n(); ++n) {
      const Tensor<float> m = slice(batch->mask, n);
      const ErrorSums e = error_sums(slice(output, n), slice(batch->gt, n), m, opt.quantize_metrics);
      const double mse = e.all / (3.0 * static_cast<double>(e.pixels));
      psnr_sum += psnr_from_mse(mse);
      mse_sum += mse;
      ++seen;
      if (e.fg_pixels > 0) {
        fmse_sum += e.fg / (3.0 * static_cast<double>(e.fg_pixels));
        ++seen_fg;
      }
    }

    if (batch->closes_epoch) {
      EpochLog entry;
      entry.epoch = batch->epoch;
      entry.lr = opt.adam.lr * factor;
      entry.loss = loss_sum / loss_count;
      entry.metrics.psnr = psnr_sum / seen;
      entry.metrics.mse = mse_sum / seen;
      entry.metrics.fmse = seen_fg > 0 ? fmse_sum / seen_fg : 0.0;
      const auto now = Clock::now();
      if (opt.log_wall_ms)
        entry.wall_ms = std::chrono::duration<double, std::milli>(now - epoch_start).count();
      epoch_start = now;
      if (log_file.is_open()) log_file << format_epoch_log(entry) << '\n' << std::flush;
      log::info(format_epoch_log(entry));
      result.epochs.push_back(entry);
      loss_sum = psnr_sum = mse_sum = fmse_sum = 0.0;
      loss_count = seen = seen_fg = 0;
      if (opt.checkpoint_every > 0 && (batch->epoch + 1) % opt.checkpoint_every == 0 &&
          !opt.checkpoint_path.empty())
        save_checkpoint(opt.checkpoint_path, generator.config(), params);
    }
  }
  queue.cancel();
  producer.join();  // a producer error surfaces through pop() above

  if (!opt.checkpoint_path.empty()) save_checkpoint(opt.checkpoint_path, generator.config(), params);
  result.final_metrics = evaluate(generator, samples, opt.quantize_metrics, &result.baseline_metrics);
  return result;
}

}  // namespace harmony
