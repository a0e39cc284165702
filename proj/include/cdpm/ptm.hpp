#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>

#include "cdpm/core/nn.hpp"
#include "cdpm/core/ops.hpp"
#include "cdpm/core/random.hpp"
#include "cdpm/series.hpp"

// Polynomial trend module: two channel-shared L -> T linear maps along time,
// one on the historical component and one on its signed square root.
namespace cdpm::ptm {

struct PtmConfig {
  std::size_t seq_len = 96;
  std::size_t pred_len = 48;
  /// false gives the single-linear-layer ablation (no root pathway, no mixing weights).
  bool root_path = true;
};

struct PtmParams {
  PtmConfig config;
  nn::Linear linear_origin;
  std::optional<nn::Linear> linear_root;
  std::optional<Tensor> lambda1;
  std::optional<Tensor> lambda2;

  static PtmParams init(const PtmConfig& cfg, Rng& rng) {
    if (cfg.seq_len == 0 || cfg.pred_len == 0) throw std::invalid_argument("PtmConfig: zero window length");
    PtmParams p;
    p.config = cfg;
    p.linear_origin = nn::Linear(cfg.seq_len, cfg.pred_len, rng);
    if (cfg.root_path) {
      p.linear_root = nn::Linear(cfg.seq_len, cfg.pred_len, rng);
      p.lambda1 = Tensor::scalar(1.0, true);
      p.lambda2 = Tensor::scalar(0.1, true);
    }
    return p;
  }

  nn::NamedTensors named_parameters(const std::string& prefix = "ptm") const {
    nn::NamedTensors out;
    linear_origin.collect(prefix + ".linear_origin", out);
    if (linear_root) linear_root->collect(prefix + ".linear_root", out);
    if (lambda1) out.emplace_back(prefix + ".lambda1", *lambda1);
    if (lambda2) out.emplace_back(prefix + ".lambda2", *lambda2);
    return out;
  }
};

inline double signed_sqrt(double x) { return std::copysign(std::sqrt(std::abs(x)), x); }

inline series::Series signed_sqrt(const series::Series& s) {
  series::Series out(s.rows(), s.cols());
  for (std::size_t i = 0; i < s.size(); ++i) out.values()[i] = signed_sqrt(s.values()[i]);
  return out;
}

namespace detail {
/// [B, L, d] -> per-channel rows [B, d, L] -> linear along time -> [B, T, d]
inline Tensor along_time(const Tensor& x, const nn::Linear& layer) {
  return ops::transpose_last2(layer(ops::transpose_last2(x)));
}
}  // namespace detail

/// lambda1 * Linear_origin(x) + lambda2 * Linear_root(signed_sqrt(x)), mapped along time per channel.
/// `hist` is [L, d] or [B, L, d]; the result has matching rank with T rows.
inline Tensor ptm_forward(const Tensor& hist, const PtmParams& p) {
  const bool single = hist.dim() == 2;
  if (hist.dim() != 2 && hist.dim() != 3) throw std::invalid_argument("ptm_forward: expected [L, d] or [B, L, d]");
  const Tensor x = single ? ops::reshape(hist, {1, hist.size(0), hist.size(1)}) : hist;
  if (x.size(1) != p.config.seq_len) {
    throw std::invalid_argument("ptm_forward: expected " + std::to_string(p.config.seq_len) + " historical steps, got " +
                                shape_str(hist.shape()));
  }
  Tensor out = detail::along_time(x, p.linear_origin);
  if (p.linear_root) {
    out = ops::add(ops::scale(out, *p.lambda1),
                   ops::scale(detail::along_time(ops::signed_sqrt(x), *p.linear_root), *p.lambda2));
  }
  if (single) out = ops::reshape(out, {out.size(1), out.size(2)});
  return out;
}

}  // namespace cdpm::ptm
