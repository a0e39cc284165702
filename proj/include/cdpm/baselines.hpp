#pragma once

#include <functional>
#include <numeric>
#include <vector>

#include "cdpm/config.hpp"
#include "cdpm/core/nn.hpp"
#include "cdpm/data.hpp"
#include "cdpm/trainer.hpp"

namespace cdpm::baselines {

using series::Series;

/// Copies the last historical row across the horizon.
inline Series repeat_last(const Series& hist, std::size_t pred_len) {
  Series out(pred_len, hist.cols());
  for (std::size_t t = 0; t < pred_len; ++t)
    for (std::size_t c = 0; c < hist.cols(); ++c) out(t, c) = hist(hist.rows() - 1, c);
  return out;
}

inline train::Metrics repeat_last_metrics(const data::WindowSet& set) {
  if (set.empty()) throw std::invalid_argument("repeat_last_metrics: no windows");
  train::detail::Accumulator acc;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto p = set.pair(i);
    acc.add(repeat_last(p.hist, set.pred_len()), p.target);
  }
  return {acc.mse(), acc.mae(), set.size(), std::nullopt, std::nullopt};
}

/// One channel-shared L -> T linear map over instance-normalised history,
/// trained with the same loss, optimizer and stopping rule as the main model.
class PlainLinear {
 public:
  PlainLinear(const Config& cfg) : cfg_(cfg) {
    Rng rng(mix_seed(cfg.seed, 0x4c49));
    layer_ = nn::Linear(cfg.seq_len, cfg.pred_len, rng);
  }

  nn::NamedTensors named_parameters() const {
    nn::NamedTensors out;
    layer_.collect("linear", out);
    return out;
  }

  /// [B, L, d] -> [B, T, d] in normalised space.
  Tensor forward(const Tensor& hist) const { return ops::transpose_last2(layer_(ops::transpose_last2(hist))); }

  Tensor loss(const data::WindowSet& set, std::span<const std::size_t> idx) const {
    std::vector<series::WindowPair> norm;
    for (auto i : idx) norm.push_back(normalize(set.pair(i)));
    std::vector<const Series*> h, t;
    for (const auto& p : norm) {
      h.push_back(&p.hist);
      t.push_back(&p.target);
    }
    return train::ielbo_loss(forward(model::stack(h)), model::stack(t));
  }

  double mean_loss(const data::WindowSet& set) const {
    NoGradGuard no_grad;
    double sum = 0.0;
    std::vector<std::size_t> idx;
    for (std::size_t begin = 0; begin < set.size(); begin += cfg_.eval_batch) {
      idx.resize(std::min(cfg_.eval_batch, set.size() - begin));
      std::iota(idx.begin(), idx.end(), begin);
      sum += loss(set, idx).item() * static_cast<double>(idx.size());
    }
    return sum / static_cast<double>(set.size());
  }

  Series predict(const series::WindowPair& raw) const {
    NoGradGuard no_grad;
    const auto p = normalize(raw);
    const Tensor out = forward(model::stack({&p.hist}));
    return series::denormalize(model::unstack(out.data(), 0, cfg_.pred_len, raw.hist.cols()), p.mean, p.std);
  }

  train::FitResult train(const data::WindowSet& train_set, const data::WindowSet& val,
                         std::function<void(const train::EpochRecord&)> on_epoch = {}) {
    auto params = named_parameters();
    optim::Adam opt(params, {cfg_.lr});
    train::FitHooks hooks;
    hooks.train_size = train_set.size();
    hooks.batch_loss = [&](std::span<const std::size_t> idx, Rng&) { return loss(train_set, idx); };
    hooks.validation_loss = [&] { return mean_loss(val); };
    hooks.on_epoch = std::move(on_epoch);
    return train::fit(params, opt, train::FitOptions::from(cfg_), hooks);
  }

  train::Metrics evaluate(const data::WindowSet& set) const {
    train::detail::Accumulator acc;
    for (std::size_t i = 0; i < set.size(); ++i) {
      const auto p = set.pair(i);
      acc.add(predict(p), p.target);
    }
    return {acc.mse(), acc.mae(), set.size(), std::nullopt, std::nullopt};
  }

 private:
  series::WindowPair normalize(const series::WindowPair& raw) const { return series::instance_normalize(raw, cfg_.std_floor); }

  Config cfg_;
  nn::Linear layer_;
};

}  // namespace cdpm::baselines
