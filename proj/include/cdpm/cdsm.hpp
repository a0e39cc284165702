#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdpm/core/nn.hpp"
#include "cdpm/core/ops.hpp"
#include "cdpm/core/random.hpp"
#include "cdpm/core/tensor.hpp"
#include "cdpm/series.hpp"

// Conditional denoising seasonal module: a clean-signal denoiser over noisy
// component windows, modulated by the diffusion step and mixed with a draw
// from patch statistics predicted off the historical window.
//
// Batched tensors use the layouts
//   series       [B, T, d]
//   hidden       [B, T, d_model]
//   patch stats  [B, d, P]
namespace cdpm::cdsm {

struct CdsmConfig {
  std::size_t channels = 1;
  std::size_t seq_len = 96;
  std::size_t pred_len = 48;
  std::size_t patch_len = 8;
  std::size_t d_model = 256;
  std::size_t conv_width = 3;
  std::size_t stat_hidden = 64;
  bool conditioning = true;
  double ln_eps = 1e-5;

  std::size_t hist_patches() const { return series::num_patches(seq_len, patch_len); }
  std::size_t target_patches() const { return series::num_patches(pred_len, patch_len); }

  void validate() const {
    if (channels == 0 || seq_len == 0 || pred_len == 0 || d_model == 0) throw std::invalid_argument("CdsmConfig: zero extent");
    if (patch_len == 0 || patch_len > pred_len) throw std::invalid_argument("CdsmConfig: patch length must be in [1, pred_len]");
    if (conv_width % 2 == 0) throw std::invalid_argument("CdsmConfig: conv width must be odd");
  }
};

/// Step-encoding projection feeding one adaptive layer norm.
struct AdaLnProjection {
  nn::Linear proj;  // d_model -> 2 * d_model, [scale | shift]

  AdaLnProjection() = default;
  AdaLnProjection(std::size_t d_model, Rng& rng) : proj(d_model, 2 * d_model, rng, 0.1) {
    auto b = proj.bias.mutable_data();
    for (std::size_t j = 0; j < b.size(); ++j) b[j] = j < d_model ? 1.0 : 0.0;
  }
};

struct CdsmParams {
  CdsmConfig config;
  nn::Conv1d embed_conv;
  nn::Mlp embed_mlp;
  AdaLnProjection adaln_embed;
  nn::Conv1d decoder_conv;
  AdaLnProjection adaln_decoder;
  nn::Mlp decoder_mlp;
  nn::Linear out_proj;
  std::optional<nn::Mlp> mlp_mu;
  std::optional<nn::Mlp> mlp_sigma;
  Tensor rho1;
  std::optional<Tensor> rho2;

  static CdsmParams init(const CdsmConfig& cfg, Rng& rng) {
    cfg.validate();
    CdsmParams p;
    p.config = cfg;
    const auto D = cfg.d_model;
    p.embed_conv = nn::Conv1d(cfg.channels, D, cfg.conv_width, rng);
    p.embed_mlp = nn::Mlp(D, D, D, rng);
    p.adaln_embed = AdaLnProjection(D, rng);
    p.decoder_conv = nn::Conv1d(D, D, cfg.conv_width, rng);
    p.adaln_decoder = AdaLnProjection(D, rng);
    p.decoder_mlp = nn::Mlp(D, D, D, rng);
    p.out_proj = nn::Linear(D, cfg.channels, rng);
    if (cfg.conditioning) {
      p.mlp_mu = nn::Mlp(cfg.hist_patches(), cfg.stat_hidden, cfg.target_patches(), rng);
      p.mlp_sigma = nn::Mlp(cfg.hist_patches(), cfg.stat_hidden, cfg.target_patches(), rng);
    }
    p.rho1 = Tensor::scalar(1.0, true);
    if (cfg.conditioning) p.rho2 = Tensor::scalar(0.1, true);
    return p;
  }

  nn::NamedTensors named_parameters(const std::string& prefix = "cdsm") const {
    nn::NamedTensors out;
    embed_conv.collect(prefix + ".embed.conv", out);
    embed_mlp.collect(prefix + ".embed.mlp", out);
    adaln_embed.proj.collect(prefix + ".adaln_embed.proj", out);
    decoder_conv.collect(prefix + ".decoder.conv", out);
    adaln_decoder.proj.collect(prefix + ".adaln_decoder.proj", out);
    decoder_mlp.collect(prefix + ".decoder.mlp", out);
    out_proj.collect(prefix + ".out_proj", out);
    if (mlp_mu) mlp_mu->collect(prefix + ".mlp_mu", out);
    if (mlp_sigma) mlp_sigma->collect(prefix + ".mlp_sigma", out);
    out.emplace_back(prefix + ".rho1", rho1);
    if (rho2) out.emplace_back(prefix + ".rho2", *rho2);
    return out;
  }
};

struct Conditioning {
  Tensor mu_hat;       // [B, d, P_T]
  Tensor sigma2_hat;   // [B, d, P_T]
  Tensor grad_sample;  // [B, T, d]
};

namespace detail {

inline Tensor as_batch(const Tensor& x) {
  if (x.dim() == 3) return x;
  if (x.dim() == 2) return ops::reshape(x, {1, x.size(0), x.size(1)});
  throw std::invalid_argument("expected [T, d] or [B, T, d], got " + shape_str(x.shape()));
}

inline void check_finite(const Tensor& t, const char* layer) {
  if (!t.all_finite()) throw std::runtime_error(std::string("cdsm: non-finite activations after ") + layer);
}

}  // namespace detail

/// Transformer-style sinusoidal code of step k: (sin, cos) pairs at
/// frequencies 10000^(-2i/dim), interleaved.
inline std::vector<double> step_encoding(int k, std::size_t dim) {
  std::vector<double> enc(dim);
  for (std::size_t i = 0; i < dim; i += 2) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(dim));
    enc[i] = std::sin(k * freq);
    if (i + 1 < dim) enc[i + 1] = std::cos(k * freq);
  }
  return enc;
}

inline Tensor step_encodings(const std::vector<int>& steps, std::size_t dim) {
  std::vector<double> data;
  data.reserve(steps.size() * dim);
  for (int k : steps) {
    auto e = step_encoding(k, dim);
    data.insert(data.end(), e.begin(), e.end());
  }
  return Tensor({steps.size(), dim}, std::move(data));
}

/// Temporal convolution into d_model features followed by a per-step MLP.
inline Tensor embed(const Tensor& x_noisy, const CdsmParams& p) {
  const Tensor x = detail::as_batch(x_noisy);
  if (x.size(1) != p.config.pred_len || x.size(2) != p.config.channels) {
    throw std::invalid_argument("cdsm::embed: expected [B, " + std::to_string(p.config.pred_len) + ", " +
                                std::to_string(p.config.channels) + "], got " + shape_str(x_noisy.shape()));
  }
  Tensor h = ops::transpose_last2(p.embed_conv(ops::transpose_last2(x)));
  return p.embed_mlp(h);
}

/// scale(k) * LayerNorm(h) + shift(k), with (scale, shift) projected from the step encoding.
inline Tensor adaln(const Tensor& h, const std::vector<int>& steps, const AdaLnProjection& proj, const CdsmParams& p) {
  const auto D = p.config.d_model;
  if (h.dim() != 3 || h.size(0) != steps.size() || h.size(2) != D) {
    throw std::invalid_argument("cdsm::adaln: hidden " + shape_str(h.shape()) + " does not match " +
                                std::to_string(steps.size()) + " step(s) and d_model " + std::to_string(D));
  }
  const Tensor mod = proj.proj(step_encodings(steps, D));
  return ops::modulate(ops::layer_norm(h, p.config.ln_eps), ops::slice_last(mod, 0, D), ops::slice_last(mod, D, D));
}

/// Packs one field of per-window patch statistics as a constant [B, d, P] tensor.
inline Tensor stats_tensor(const std::vector<const series::PatchStatistics*>& stats, bool variances) {
  if (stats.empty()) throw std::invalid_argument("stats_tensor: empty batch");
  const auto P = stats.front()->num_patches;
  const auto d = stats.front()->means.cols();
  std::vector<double> data(stats.size() * d * P);
  for (std::size_t b = 0; b < stats.size(); ++b) {
    const auto& s = variances ? stats[b]->variances : stats[b]->means;
    if (s.rows() != P || s.cols() != d) throw std::invalid_argument("stats_tensor: inconsistent patch layout in batch");
    for (std::size_t c = 0; c < d; ++c)
      for (std::size_t i = 0; i < P; ++i) data[(b * d + c) * P + i] = s(i, c);
  }
  return Tensor({stats.size(), d, P}, std::move(data));
}

struct TargetStats {
  Tensor mu_hat;      // [B, d, P_T]
  Tensor sigma2_hat;  // [B, d, P_T], non-negative
};

/// Maps historical patch means/variances [B, d, P_L] to target-patch predictions.
/// Weights are shared across channels.
inline TargetStats predict_target_stats(const Tensor& hist_means, const Tensor& hist_vars, const CdsmParams& p) {
  if (!p.mlp_mu || !p.mlp_sigma) throw std::logic_error("cdsm: conditioning path disabled for this model");
  if (hist_means.shape().back() != p.config.hist_patches()) {
    throw std::invalid_argument("cdsm::predict_target_stats: expected " + std::to_string(p.config.hist_patches()) +
                                " historical patches, got " + shape_str(hist_means.shape()));
  }
  return {(*p.mlp_mu)(hist_means), ops::softplus((*p.mlp_sigma)(hist_vars))};
}

inline TargetStats predict_target_stats(const series::PatchStatistics& hist, const CdsmParams& p) {
  return predict_target_stats(stats_tensor({&hist}, false), stats_tensor({&hist}, true), p);
}

/// Per patch i: mu_hat_i + sqrt(sigma2_hat_i) * z_i, held for patch_len steps
/// and cut to `length`. Returns [B, length, d].
inline Tensor conditional_draw(const Tensor& mu_hat, const Tensor& sigma2_hat, const Tensor& z, std::size_t patch_len,
                               std::size_t length) {
  if (mu_hat.shape() != sigma2_hat.shape() || mu_hat.shape() != z.shape()) {
    throw std::invalid_argument("conditional_draw: mu " + shape_str(mu_hat.shape()) + ", sigma2 " +
                                shape_str(sigma2_hat.shape()) + ", z " + shape_str(z.shape()) + " must agree");
  }
  for (double v : sigma2_hat.data()) {
    if (!(v >= 0.0)) throw std::runtime_error("conditional_draw: negative or NaN variance " + std::to_string(v));
  }
  Tensor per_patch = ops::add(mu_hat, ops::mul(ops::sqrt(sigma2_hat), z));
  Tensor expanded = ops::repeat_patches(per_patch, patch_len, length);  // [B, d, T]
  if (expanded.dim() == 2) expanded = ops::reshape(expanded, {1, expanded.size(0), expanded.size(1)});
  return ops::transpose_last2(expanded);
}

/// Builds the conditioning record once per window batch. `z` is [B, d, P_T].
inline Conditioning make_conditioning(const std::vector<const series::PatchStatistics*>& hist_stats, const Tensor& z,
                                      const CdsmParams& p) {
  auto ts = predict_target_stats(stats_tensor(hist_stats, false), stats_tensor(hist_stats, true), p);
  Tensor draw = conditional_draw(ts.mu_hat, ts.sigma2_hat, z, p.config.patch_len, p.config.pred_len);
  return {ts.mu_hat, ts.sigma2_hat, draw};
}

/// The network path alone: out_proj(LN(decoder(adaln(embed(x), k))))).
inline Tensor network_path(const Tensor& x_noisy, const std::vector<int>& steps, const CdsmParams& p) {
  const auto& cfg = p.config;
  Tensor h = embed(x_noisy, p);
  detail::check_finite(h, "embed");
  Tensor a = adaln(h, steps, p.adaln_embed, p);
  detail::check_finite(a, "adaln_embed");
  Tensor c = ops::add(a, ops::transpose_last2(p.decoder_conv(ops::transpose_last2(a))));
  detail::check_finite(c, "decoder.conv");
  Tensor a2 = adaln(c, steps, p.adaln_decoder, p);
  detail::check_finite(a2, "adaln_decoder");
  Tensor m = ops::add(c, p.decoder_mlp(a2));
  detail::check_finite(m, "decoder.mlp");
  Tensor out = p.out_proj(ops::layer_norm(m, cfg.ln_eps));
  detail::check_finite(out, "out_proj");
  return out;
}

/// rho1 * network_path(x_noisy, k) + rho2 * cond.grad_sample, shape [B, T, d].
/// Without a conditioning path (or cond == nullptr) the second term is dropped.
inline Tensor denoise(const Tensor& x_noisy, const std::vector<int>& steps, const Conditioning* cond, const CdsmParams& p) {
  const Tensor x = detail::as_batch(x_noisy);
  if (steps.size() != x.size(0)) {
    throw std::invalid_argument("cdsm::denoise: " + std::to_string(steps.size()) + " step(s) for batch of " +
                                std::to_string(x.size(0)));
  }
  for (int k : steps) {
    if (k < 1) throw std::invalid_argument("cdsm::denoise: diffusion step must be >= 1");
  }
  Tensor out = ops::scale(network_path(x, steps, p), p.rho1);
  if (cond && p.rho2) {
    if (cond->grad_sample.shape() != out.shape()) {
      throw std::invalid_argument("cdsm::denoise: conditioning draw " + shape_str(cond->grad_sample.shape()) +
                                  " does not match output " + shape_str(out.shape()));
    }
    out = ops::add(out, ops::scale(cond->grad_sample, *p.rho2));
  }
  return out;
}

}  // namespace cdpm::cdsm
