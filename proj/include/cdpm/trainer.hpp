#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdpm/core/log.hpp"
#include "cdpm/core/random.hpp"
#include "cdpm/data.hpp"
#include "cdpm/model.hpp"
#include "cdpm/optim.hpp"

namespace cdpm::train {

using series::Series;

// Stream tags for mix_seed, kept apart so that no two draws share a stream.
inline constexpr std::uint64_t kShuffleStream = 0x5348;
inline constexpr std::uint64_t kNoiseStream = 0x4e4f;
inline constexpr std::uint64_t kValidationStream = 0x5641;
inline constexpr std::uint64_t kEvalStream = 0x4556;

/// Mean squared error over all elements.
inline Tensor ielbo_loss(const Tensor& pred, const Tensor& truth) { return ops::mse_loss(pred, truth); }

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  bool improved = false;
  double seconds = 0.0;
};

struct FitResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val = std::numeric_limits<double>::infinity();
  bool early_stopped = false;
};

struct FitOptions {
  double lr = 1e-3;
  double lr_gamma = 0.95;
  std::size_t batch_size = 16;
  std::size_t patience = 10;
  std::size_t max_epochs = 100;
  std::uint64_t seed = 0;

  static FitOptions from(const Config& cfg) {
    return {cfg.lr, cfg.lr_gamma, cfg.batch_size, cfg.patience, cfg.max_epochs, cfg.seed};
  }
};

struct FitHooks {
  std::size_t train_size = 0;
  /// Training objective for the given window indices; draws noise from `rng`.
  std::function<Tensor(std::span<const std::size_t>, Rng&)> batch_loss;
  /// Deterministic validation criterion (lower is better).
  std::function<double()> validation_loss;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Minibatch training with per-epoch exponential learning-rate decay and early
/// stopping on the validation criterion. On return the parameters and the
/// optimizer hold the state of the best epoch.
inline FitResult fit(nn::NamedTensors params, optim::Adam& opt, const FitOptions& o, const FitHooks& hooks) {
  if (hooks.train_size == 0) throw std::invalid_argument("fit: empty training split");
  if (!hooks.batch_loss || !hooks.validation_loss) throw std::invalid_argument("fit: missing hooks");
  FitResult result;
  optim::Snapshot best = optim::Snapshot::take(params, &opt);
  std::size_t bad_epochs = 0;
  std::vector<std::size_t> order(hooks.train_size);
  for (std::size_t e = 0; e < o.max_epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = e + 1;
    rec.lr = o.lr * std::pow(o.lr_gamma, static_cast<double>(e));
    opt.set_lr(rec.lr);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(mix_seed(o.seed, kShuffleStream + 0x10000 * e));
    shuffle_rng.shuffle(order.begin(), order.end());
    Rng noise_rng(mix_seed(o.seed, kNoiseStream + 0x10000 * e));
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += o.batch_size) {
      const auto count = std::min(o.batch_size, order.size() - begin);
      opt.zero_grad();
      const Tensor loss = hooks.batch_loss(std::span<const std::size_t>(order.data() + begin, count), noise_rng);
      if (!std::isfinite(loss.item())) {
        throw std::runtime_error("fit: non-finite loss at epoch " + std::to_string(e + 1) + ", batch " + std::to_string(batches));
      }
      backward(loss);
      opt.step();
      loss_sum += loss.item();
      ++batches;
    }
    rec.train_loss = loss_sum / static_cast<double>(batches);
    rec.val_loss = hooks.validation_loss();
    if (!std::isfinite(rec.val_loss)) throw std::runtime_error("fit: non-finite validation loss at epoch " + std::to_string(e + 1));
    rec.improved = rec.val_loss < result.best_val;
    if (rec.improved) {
      result.best_val = rec.val_loss;
      result.best_epoch = e + 1;
      best = optim::Snapshot::take(params, &opt);
      bad_epochs = 0;
    } else {
      ++bad_epochs;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
    if (bad_epochs >= o.patience) {
      result.early_stopped = true;
      break;
    }
  }
  best.restore(params, &opt);
  return result;
}

/// Prepared windows for a batch of indices.
inline std::vector<model::PreparedWindow> prepare_batch(const model::Model& m, const data::WindowSet& set,
                                                        std::span<const std::size_t> idx) {
  std::vector<model::PreparedWindow> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(m.prepare(set.pair(i)));
  return out;
}

inline std::vector<const model::PreparedWindow*> pointers(const std::vector<model::PreparedWindow>& v) {
  std::vector<const model::PreparedWindow*> out;
  for (const auto& w : v) out.push_back(&w);
  return out;
}

/// Training objective averaged over a window set with noise re-drawn from a
/// fixed seed, so repeated calls with the same parameters agree bit for bit.
inline double objective_loss(const model::Model& m, const data::WindowSet& set, std::uint64_t seed, std::size_t batch) {
  NoGradGuard no_grad;
  Rng rng(mix_seed(seed, kValidationStream));
  double sum = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < set.size(); begin += batch) {
    idx.resize(std::min(batch, set.size() - begin));
    std::iota(idx.begin(), idx.end(), begin);
    auto prepared = prepare_batch(m, set, idx);
    const auto ptrs = pointers(prepared);
    sum += m.loss(ptrs, m.draw_noise(ptrs.size(), rng)).item() * static_cast<double>(idx.size());
  }
  return sum / static_cast<double>(set.size());
}

/// Mean squared error of full DDIM forecasts in model space.
inline double sampling_loss(const model::Model& m, const data::WindowSet& set, std::uint64_t seed, std::size_t batch,
                            int ddim_steps = 0) {
  double sum = 0.0;
  std::size_t n = 0;
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < set.size(); begin += batch) {
    idx.resize(std::min(batch, set.size() - begin));
    std::iota(idx.begin(), idx.end(), begin);
    auto prepared = prepare_batch(m, set, idx);
    std::vector<std::uint64_t> seeds;
    for (auto i : idx) seeds.push_back(mix_seed(mix_seed(seed, kValidationStream), i));
    const auto fc = m.forecast(pointers(prepared), seeds, ddim_steps);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto& p = fc[b].total;
      const auto& t = prepared[b].target;
      for (std::size_t j = 0; j < p.size(); ++j) sum += (p.values()[j] - t.values()[j]) * (p.values()[j] - t.values()[j]);
      n += p.size();
    }
  }
  return sum / static_cast<double>(n);
}

/// Candidate DDIM step counts tried by select_ddim_steps.
inline std::vector<int> ddim_step_candidates(int K) {
  std::vector<int> out;
  for (int s : {1, 2, 5, 10, 25, 50, 100, 200, 500, 1000}) {
    if (s < K) out.push_back(s);
  }
  out.push_back(K);
  return out;
}

struct StepSelection {
  int steps = 0;
  std::vector<std::pair<int, double>> losses;  // (steps, validation sampling MSE)
};

/// Smallest validation sampling error over the candidate step counts; ties go
/// to fewer steps.
inline StepSelection select_ddim_steps(const model::Model& m, const data::WindowSet& val, std::uint64_t seed,
                                       std::size_t batch) {
  StepSelection sel;
  double best = std::numeric_limits<double>::infinity();
  for (int s : ddim_step_candidates(m.schedule().K)) {
    const double loss = sampling_loss(m, val, seed, batch, s);
    sel.losses.emplace_back(s, loss);
    if (loss < best) {
      best = loss;
      sel.steps = s;
    }
  }
  return sel;
}

struct TrainOutcome {
  FitResult fit;
  optim::Adam optimizer;
};

/// Trains `m` in place on `train`, early-stopping on `val`.
inline TrainOutcome train_model(model::Model& m, const data::WindowSet& train, const data::WindowSet& val,
                                std::function<void(const EpochRecord&)> on_epoch = {}) {
  const auto& cfg = m.config();
  if (train.empty() || val.empty()) throw std::invalid_argument("train: empty train or validation split");
  auto params = m.named_parameters();
  TrainOutcome out{{}, optim::Adam(params, {cfg.lr})};
  FitHooks hooks;
  hooks.train_size = train.size();
  hooks.batch_loss = [&](std::span<const std::size_t> idx, Rng& rng) {
    auto prepared = prepare_batch(m, train, idx);
    const auto ptrs = pointers(prepared);
    return m.loss(ptrs, m.draw_noise(ptrs.size(), rng));
  };
  hooks.validation_loss = [&] {
    return cfg.full_sampling_validation ? sampling_loss(m, val, cfg.seed, cfg.eval_batch)
                                        : objective_loss(m, val, cfg.seed, cfg.eval_batch);
  };
  hooks.on_epoch = std::move(on_epoch);
  out.fit = fit(params, out.optimizer, FitOptions::from(cfg), hooks);
  return out;
}

struct Metrics {
  double mse = 0.0;
  double mae = 0.0;
  std::size_t windows = 0;
  std::optional<double> trend_mse;
  std::optional<double> seasonal_mse;
};

/// One evaluated window in data units.
struct WindowOutput {
  std::size_t index = 0;
  std::size_t target_start = 0;
  Series truth;
  Series prediction;
  std::optional<Series> trend;
  std::optional<Series> seasonal;
};

struct EvalOptions {
  std::uint64_t seed = 0;
  int ddim_steps = 0;  // 0: use the model config
  std::size_t batch = 64;
  const Series* true_trend = nullptr;     // rows aligned with the window source
  const Series* true_seasonal = nullptr;
  std::function<void(const WindowOutput&)> on_window;
};

namespace detail {
struct Accumulator {
  double sq = 0.0, abs = 0.0;
  std::size_t n = 0;
  void add(const Series& a, const Series& b) {
    for (std::size_t j = 0; j < a.size(); ++j) {
      const double e = a.values()[j] - b.values()[j];
      sq += e * e;
      abs += std::abs(e);
    }
    n += a.size();
  }
  double mse() const { return sq / static_cast<double>(n); }
  double mae() const { return abs / static_cast<double>(n); }
};

inline Series scale_only(const Series& s, const std::vector<double>& sd) {
  return series::denormalize(s, std::vector<double>(sd.size(), 0.0), sd);
}
}  // namespace detail

/// Forecasts every window by DDIM sampling plus the trend module, maps back to
/// data units and accumulates MSE/MAE. Component errors are reported when the
/// true components are supplied and the variant separates the two parts.
inline Metrics evaluate(const model::Model& m, const data::WindowSet& set, const EvalOptions& opts) {
  if (set.empty()) throw std::invalid_argument("evaluate: no windows");
  const auto& w = m.wiring();
  const bool components = w.decompose && w.has_ptm;
  const bool score_components = components && opts.true_trend && opts.true_seasonal;
  detail::Accumulator total, trend_acc, seasonal_acc;
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < set.size(); begin += opts.batch) {
    idx.resize(std::min(opts.batch, set.size() - begin));
    std::iota(idx.begin(), idx.end(), begin);
    std::vector<series::WindowPair> raw;
    std::vector<model::PreparedWindow> prepared;
    for (auto i : idx) {
      raw.push_back(set.pair(i));
      prepared.push_back(m.prepare(raw.back()));
    }
    std::vector<std::uint64_t> seeds;
    for (auto i : idx) seeds.push_back(mix_seed(mix_seed(opts.seed, kEvalStream), i));
    const auto fc = m.forecast(pointers(prepared), seeds, opts.ddim_steps);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto& pw = prepared[b];
      WindowOutput out;
      out.index = idx[b];
      out.target_start = set.target_start(idx[b]);
      out.truth = raw[b].target;
      out.prediction = series::denormalize(fc[b].total, pw.mean, pw.std);
      total.add(out.prediction, out.truth);
      if (components) {
        const bool cdsm_is_seasonal = w.cdsm_source == model::Source::seasonal;
        const Series& seasonal_part = cdsm_is_seasonal ? fc[b].cdsm : *fc[b].ptm;
        const Series& trend_part = cdsm_is_seasonal ? *fc[b].ptm : fc[b].cdsm;
        out.trend = series::denormalize(trend_part, pw.mean, pw.std);
        out.seasonal = detail::scale_only(seasonal_part, pw.std);
        if (score_components) {
          trend_acc.add(*out.trend, opts.true_trend->slice_rows(out.target_start, set.pred_len()));
          seasonal_acc.add(*out.seasonal, opts.true_seasonal->slice_rows(out.target_start, set.pred_len()));
        }
      }
      if (opts.on_window) opts.on_window(out);
    }
  }
  Metrics metrics;
  metrics.mse = total.mse();
  metrics.mae = total.mae();
  metrics.windows = set.size();
  if (score_components) {
    metrics.trend_mse = trend_acc.mse();
    metrics.seasonal_mse = seasonal_acc.mse();
  }
  return metrics;
}

}  // namespace cdpm::train
