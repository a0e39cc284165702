#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdpm/cdsm.hpp"
#include "cdpm/config.hpp"
#include "cdpm/core/nn.hpp"
#include "cdpm/core/random.hpp"
#include "cdpm/diffusion.hpp"
#include "cdpm/ptm.hpp"
#include "cdpm/series.hpp"

// The combined forecaster: instance normalisation, decomposition, the
// denoiser on one component and the trend module on the other.
namespace cdpm::model {

using series::Series;

enum class Source { seasonal, trend, whole };

/// How a variant routes the window through the two modules.
struct Wiring {
  bool normalize = true;
  bool decompose = true;
  bool conditioning = true;
  bool root_path = true;
  bool has_ptm = true;
  Source cdsm_source = Source::seasonal;
  Source ptm_source = Source::trend;
};

inline Wiring wiring_for(Variant v) {
  Wiring w;
  switch (v) {
    case Variant::full: break;
    case Variant::no_cond: w.conditioning = false; break;
    case Variant::linear_trend: w.root_path = false; break;
    case Variant::no_norm: w.normalize = false; break;
    case Variant::no_cond_linear:
      w.conditioning = false;
      w.root_path = false;
      break;
    case Variant::coupled:
      w.decompose = false;
      w.has_ptm = false;
      w.cdsm_source = Source::whole;
      break;
    case Variant::swapped:
      w.cdsm_source = Source::trend;
      w.ptm_source = Source::seasonal;
      break;
  }
  return w;
}

/// One window after normalisation and decomposition, in model space.
struct PreparedWindow {
  Series target;       // T x d, what the summed output is trained against
  Series cdsm_target;  // T x d, clean signal the denoiser learns to recover
  Series ptm_hist;     // L x d, trend-module input (empty without one)
  Series ptm_target;   // T x d, component the trend module stands for (empty without one)
  series::PatchStatistics cond_stats;  // of the denoiser's historical component
  std::vector<double> mean;
  std::vector<double> std;
};

namespace detail {
inline const Series& pick(const series::DecomposedWindow& d, const Series& whole, Source s) {
  switch (s) {
    case Source::seasonal: return d.seasonal;
    case Source::trend: return d.trend;
    case Source::whole: return whole;
  }
  return whole;
}
}  // namespace detail

inline PreparedWindow prepare(const series::WindowPair& raw, const Config& cfg, const Wiring& w) {
  if (raw.hist.rows() != cfg.seq_len || raw.target.rows() != cfg.pred_len) {
    throw std::invalid_argument("prepare: window is " + std::to_string(raw.hist.rows()) + "+" +
                                std::to_string(raw.target.rows()) + " rows, config expects " +
                                std::to_string(cfg.seq_len) + "+" + std::to_string(cfg.pred_len));
  }
  series::WindowPair pair;
  if (w.normalize) {
    pair = series::instance_normalize(raw, cfg.std_floor);
  } else {
    pair = raw;
    pair.mean.assign(raw.hist.cols(), 0.0);
    pair.std.assign(raw.hist.cols(), 1.0);
  }
  PreparedWindow out;
  out.target = pair.target;
  out.mean = pair.mean;
  out.std = pair.std;
  const Series* cond_hist = &pair.hist;
  if (w.decompose) {
    const auto hist = series::decompose(pair.hist, cfg.kernel);
    const auto target = series::decompose(pair.target, cfg.kernel);
    out.cdsm_target = detail::pick(target, pair.target, w.cdsm_source);
    if (w.has_ptm) {
      out.ptm_hist = detail::pick(hist, pair.hist, w.ptm_source);
      out.ptm_target = detail::pick(target, pair.target, w.ptm_source);
    }
    if (w.conditioning) out.cond_stats = series::patch_statistics(detail::pick(hist, pair.hist, w.cdsm_source), cfg.patch_len);
  } else {
    out.cdsm_target = pair.target;
    if (w.conditioning) out.cond_stats = series::patch_statistics(*cond_hist, cfg.patch_len);
  }
  return out;
}

/// Stacks equally shaped series into a constant [B, rows, cols] tensor.
inline Tensor stack(const std::vector<const Series*>& items) {
  if (items.empty()) throw std::invalid_argument("stack: empty batch");
  const auto rows = items.front()->rows(), cols = items.front()->cols();
  std::vector<double> data;
  data.reserve(items.size() * rows * cols);
  for (const auto* s : items) {
    if (s->rows() != rows || s->cols() != cols) throw std::invalid_argument("stack: ragged batch");
    data.insert(data.end(), s->values().begin(), s->values().end());
  }
  return Tensor({items.size(), rows, cols}, std::move(data));
}

inline Series unstack(std::span<const double> data, std::size_t b, std::size_t rows, std::size_t cols) {
  const auto n = rows * cols;
  return Series(rows, cols, std::vector<double>(data.begin() + static_cast<std::ptrdiff_t>(b * n),
                                                data.begin() + static_cast<std::ptrdiff_t>((b + 1) * n)));
}

/// Per-sample noise for one training step.
struct StepNoise {
  std::vector<int> steps;  // one k per sample
  Tensor eps;              // [B, T, d]
  Tensor z;                // [B, d, P_T]
};

/// Normalised-space outputs of one forward pass, each [B, T, d].
struct ForwardParts {
  Tensor cdsm;
  std::optional<Tensor> ptm;
  Tensor total;
};

/// Forecast for one window in model space.
struct WindowForecast {
  Series total;
  Series cdsm;
  std::optional<Series> ptm;
};

class Model {
 public:
  Model() = default;
  Model(const Config& cfg, std::size_t channels) : cfg_(cfg), wiring_(wiring_for(cfg.variant)) {
    cfg.validate();
    sched_ = diffusion::build_schedule(cfg.K, cfg.beta_1, cfg.beta_K, cfg.schedule);
    Rng rng(mix_seed(cfg.seed, 0x1417));
    cdsm::CdsmConfig cc;
    cc.channels = channels;
    cc.seq_len = cfg.seq_len;
    cc.pred_len = cfg.pred_len;
    cc.patch_len = cfg.patch_len;
    cc.d_model = cfg.d_model;
    cc.conv_width = cfg.conv_width;
    cc.stat_hidden = cfg.stat_hidden;
    cc.conditioning = wiring_.conditioning;
    cdsm_ = cdsm::CdsmParams::init(cc, rng);
    if (wiring_.has_ptm) ptm_ = ptm::PtmParams::init({cfg.seq_len, cfg.pred_len, wiring_.root_path}, rng);
  }

  const Config& config() const { return cfg_; }
  /// Default number of DDIM steps used by forecast().
  void set_ddim_steps(int steps) {
    if (steps < 1 || steps > sched_.K) throw std::invalid_argument("model: ddim steps must be in [1, K]");
    cfg_.ddim_steps = steps;
  }
  const Wiring& wiring() const { return wiring_; }
  const diffusion::NoiseSchedule& schedule() const { return sched_; }
  std::size_t channels() const { return cdsm_.config.channels; }
  cdsm::CdsmParams& cdsm() { return cdsm_; }
  const cdsm::CdsmParams& cdsm() const { return cdsm_; }
  std::optional<ptm::PtmParams>& ptm() { return ptm_; }
  const std::optional<ptm::PtmParams>& ptm() const { return ptm_; }

  nn::NamedTensors named_parameters() const {
    auto out = cdsm_.named_parameters("cdsm");
    if (ptm_) {
      for (auto& p : ptm_->named_parameters("ptm")) out.push_back(std::move(p));
    }
    return out;
  }

  PreparedWindow prepare(const series::WindowPair& raw) const { return model::prepare(raw, cfg_, wiring_); }

  StepNoise draw_noise(std::size_t batch, Rng& rng) const {
    StepNoise n;
    const auto T = cfg_.pred_len, d = channels(), P = cdsm_.config.target_patches();
    for (std::size_t b = 0; b < batch; ++b) n.steps.push_back(static_cast<int>(rng.uniform_int(1, sched_.K)));
    n.eps = Tensor({batch, T, d}, rng.normal_vector(batch * T * d));
    n.z = Tensor({batch, d, P}, rng.normal_vector(batch * d * P));
    return n;
  }

  /// denoise(q_sample(x0, k, eps), k, cond) + ptm(hist component), batched.
  ForwardParts full_forward(const std::vector<const PreparedWindow*>& batch, const StepNoise& noise) const {
    check_batch(batch, noise.steps.size());
    std::vector<const Series*> clean;
    for (const auto* w : batch) clean.push_back(&w->cdsm_target);
    const Tensor x0 = stack(clean);
    if (noise.eps.shape() != x0.shape()) throw std::invalid_argument("full_forward: eps shape " + shape_str(noise.eps.shape()));
    std::vector<double> noisy(x0.numel());
    const auto per = x0.numel() / batch.size();
    for (std::size_t b = 0; b < batch.size(); ++b) {
      auto xb = diffusion::q_sample(x0.data().subspan(b * per, per), noise.steps[b], noise.eps.data().subspan(b * per, per),
                                    sched_);
      std::copy(xb.begin(), xb.end(), noisy.begin() + static_cast<std::ptrdiff_t>(b * per));
    }
    const Tensor x_k(x0.shape(), std::move(noisy));
    std::optional<cdsm::Conditioning> cond;
    if (wiring_.conditioning) cond = cdsm::make_conditioning(stats_of(batch), noise.z, cdsm_);
    ForwardParts parts;
    parts.cdsm = cdsm::denoise(x_k, noise.steps, cond ? &*cond : nullptr, cdsm_);
    parts.total = parts.cdsm;
    if (ptm_) {
      parts.ptm = ptm::ptm_forward(ptm_input(batch), *ptm_);
      parts.total = ops::add(parts.cdsm, *parts.ptm);
    }
    return parts;
  }

  /// Mean squared error of the summed output against the window targets.
  Tensor loss(const std::vector<const PreparedWindow*>& batch, const StepNoise& noise) const {
    std::vector<const Series*> targets;
    for (const auto* w : batch) targets.push_back(&w->target);
    return ops::mse_loss(full_forward(batch, noise).total, stack(targets));
  }

  /// Deterministic DDIM forecast. Window b starts from noise drawn with seeds[b].
  std::vector<WindowForecast> forecast(const std::vector<const PreparedWindow*>& batch, const std::vector<std::uint64_t>& seeds,
                                       int ddim_steps = 0) const {
    check_batch(batch, seeds.size());
    NoGradGuard no_grad;
    const auto B = batch.size(), T = cfg_.pred_len, d = channels(), P = cdsm_.config.target_patches();
    std::vector<double> x(B * T * d), z(B * d * P);
    for (std::size_t b = 0; b < B; ++b) {
      Rng rng(seeds[b]);
      auto xb = rng.normal_vector(T * d);
      auto zb = rng.normal_vector(d * P);
      std::copy(xb.begin(), xb.end(), x.begin() + static_cast<std::ptrdiff_t>(b * T * d));
      std::copy(zb.begin(), zb.end(), z.begin() + static_cast<std::ptrdiff_t>(b * d * P));
    }
    std::optional<cdsm::Conditioning> cond;
    if (wiring_.conditioning) cond = cdsm::make_conditioning(stats_of(batch), Tensor({B, d, P}, std::move(z)), cdsm_);
    const auto steps = diffusion::ddim_steps(sched_.K, ddim_steps > 0 ? ddim_steps : cfg_.ddim_steps);
    for (std::size_t i = 0; i < steps.size(); ++i) {
      const int k = steps[i];
      const int k_prev = i + 1 < steps.size() ? steps[i + 1] : 0;
      const Tensor x0_hat = cdsm::denoise(Tensor({B, T, d}, x), std::vector<int>(B, k), cond ? &*cond : nullptr, cdsm_);
      if (!x0_hat.all_finite()) throw std::runtime_error("forecast: non-finite denoiser output at step " + std::to_string(k));
      x = diffusion::ddim_step(x, x0_hat.data(), k, k_prev, sched_);
    }
    std::optional<Tensor> trend;
    if (ptm_) trend = ptm::ptm_forward(ptm_input(batch), *ptm_);
    std::vector<WindowForecast> out(B);
    for (std::size_t b = 0; b < B; ++b) {
      out[b].cdsm = unstack(x, b, T, d);
      out[b].total = out[b].cdsm;
      if (trend) {
        out[b].ptm = unstack(trend->data(), b, T, d);
        out[b].total = out[b].total + *out[b].ptm;
      }
    }
    return out;
  }

 private:
  void check_batch(const std::vector<const PreparedWindow*>& batch, std::size_t n) const {
    if (batch.empty()) throw std::invalid_argument("model: empty batch");
    if (batch.size() != n) throw std::invalid_argument("model: batch of " + std::to_string(batch.size()) + " with " +
                                                       std::to_string(n) + " noise entries");
  }

  static std::vector<const series::PatchStatistics*> stats_of(const std::vector<const PreparedWindow*>& batch) {
    std::vector<const series::PatchStatistics*> out;
    for (const auto* w : batch) out.push_back(&w->cond_stats);
    return out;
  }

  static Tensor ptm_input(const std::vector<const PreparedWindow*>& batch) {
    std::vector<const Series*> hist;
    for (const auto* w : batch) hist.push_back(&w->ptm_hist);
    return stack(hist);
  }

  Config cfg_;
  Wiring wiring_;
  diffusion::NoiseSchedule sched_;
  cdsm::CdsmParams cdsm_;
  std::optional<ptm::PtmParams> ptm_;
};

}  // namespace cdpm::model
