#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdpm/core/random.hpp"
#include "cdpm/series.hpp"

namespace cdpm::diffusion {

enum class ScheduleKind {
  /// beta follows a half-cosine ramp from beta_1 to beta_K.
  cosine_interp,
  /// alpha_bar follows the squared-cosine curve; beta is clipped to [beta_1, beta_K].
  cosine_alpha_bar,
};

inline std::string to_string(ScheduleKind kind) {
  return kind == ScheduleKind::cosine_interp ? "cosine_interp" : "cosine_alpha_bar";
}

inline ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "cosine_interp") return ScheduleKind::cosine_interp;
  if (s == "cosine_alpha_bar") return ScheduleKind::cosine_alpha_bar;
  throw std::invalid_argument("unknown schedule kind '" + s + "'");
}

/// Per-step noise tables. Steps are 1-based; index k-1 holds step k.
struct NoiseSchedule {
  int K = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  /// Cumulative product at step k, with alpha_bar(0) = 1 (the clean signal).
  double alpha_bar_at(int k) const {
    if (k == 0) return 1.0;
    check_step(k);
    return alpha_bar[static_cast<std::size_t>(k - 1)];
  }

  void check_step(int k) const {
    if (k < 1 || k > K) throw std::out_of_range("diffusion step " + std::to_string(k) + " outside [1, " + std::to_string(K) + "]");
  }
};

namespace detail {
inline void finish_schedule(NoiseSchedule& s) {
  s.alpha.resize(s.beta.size());
  s.alpha_bar.resize(s.beta.size());
  double prod = 1.0;
  for (std::size_t i = 0; i < s.beta.size(); ++i) {
    s.alpha[i] = 1.0 - s.beta[i];
    prod *= s.alpha[i];
    s.alpha_bar[i] = prod;
  }
  for (std::size_t i = 1; i < s.beta.size(); ++i) {
    if (s.beta[i] < s.beta[i - 1]) throw std::logic_error("noise schedule: beta not nondecreasing");
    if (!(s.alpha_bar[i] < s.alpha_bar[i - 1])) throw std::logic_error("noise schedule: alpha_bar not strictly decreasing");
  }
}
}  // namespace detail

inline NoiseSchedule build_schedule(int K, double beta_1, double beta_K, ScheduleKind kind = ScheduleKind::cosine_interp) {
  if (K < 1) throw std::invalid_argument("build_schedule: K must be >= 1, got " + std::to_string(K));
  if (!(beta_1 > 0.0 && beta_1 <= beta_K && beta_K < 1.0)) {
    throw std::invalid_argument("build_schedule: need 0 < beta_1 <= beta_K < 1");
  }
  NoiseSchedule s;
  s.K = K;
  s.beta.resize(static_cast<std::size_t>(K));
  if (K == 1) {
    s.beta[0] = beta_1;
  } else if (kind == ScheduleKind::cosine_interp) {
    for (int k = 1; k <= K; ++k) {
      const double phase = std::numbers::pi * (k - 1) / (K - 1);
      s.beta[static_cast<std::size_t>(k - 1)] = beta_1 + (beta_K - beta_1) * (1.0 - std::cos(phase)) / 2.0;
    }
    s.beta.back() = beta_K;
  } else {
    constexpr double offset = 0.008;
    auto f = [&](int k) {
      const double c = std::cos((static_cast<double>(k) / K + offset) / (1.0 + offset) * std::numbers::pi / 2.0);
      return c * c;
    };
    for (int k = 1; k <= K; ++k) {
      const double b = 1.0 - f(k) / f(k - 1);
      s.beta[static_cast<std::size_t>(k - 1)] = std::clamp(b, beta_1, beta_K);
    }
  }
  detail::finish_schedule(s);
  return s;
}

/// sqrt(alpha_bar_k) * x0 + sqrt(1 - alpha_bar_k) * eps
inline std::vector<double> q_sample(std::span<const double> x0, int k, std::span<const double> eps, const NoiseSchedule& sched) {
  sched.check_step(k);
  if (x0.size() != eps.size()) throw std::invalid_argument("q_sample: x0 and eps sizes differ");
  const double ab = sched.alpha_bar_at(k);
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  std::vector<double> out(x0.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

inline series::Series q_sample(const series::Series& x0, int k, const series::Series& eps, const NoiseSchedule& sched) {
  if (x0.rows() != eps.rows() || x0.cols() != eps.cols()) throw std::invalid_argument("q_sample: x0 and eps shapes differ");
  return series::Series(x0.rows(), x0.cols(), q_sample(x0.values(), k, eps.values(), sched));
}

/// Deterministic (eta = 0) DDIM update from step k to k_prev given a clean-signal estimate.
inline std::vector<double> ddim_step(std::span<const double> x_k, std::span<const double> x0_hat, int k, int k_prev,
                                     const NoiseSchedule& sched) {
  if (k_prev >= k) throw std::invalid_argument("ddim_step: k_prev " + std::to_string(k_prev) + " must be < k " + std::to_string(k));
  if (k_prev < 0) throw std::invalid_argument("ddim_step: negative k_prev");
  if (x_k.size() != x0_hat.size()) throw std::invalid_argument("ddim_step: x_k and x0_hat sizes differ");
  sched.check_step(k);
  if (k_prev == 0) return {x0_hat.begin(), x0_hat.end()};
  const double ab = sched.alpha_bar_at(k);
  const double ab_prev = sched.alpha_bar_at(k_prev);
  const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
  const double sa_prev = std::sqrt(ab_prev), sb_prev = std::sqrt(1.0 - ab_prev);
  std::vector<double> out(x_k.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double eps_hat = (x_k[i] - sa * x0_hat[i]) / sb;
    out[i] = sa_prev * x0_hat[i] + sb_prev * eps_hat;
  }
  return out;
}

inline series::Series ddim_step(const series::Series& x_k, const series::Series& x0_hat, int k, int k_prev,
                                const NoiseSchedule& sched) {
  if (x_k.rows() != x0_hat.rows() || x_k.cols() != x0_hat.cols()) throw std::invalid_argument("ddim_step: shape mismatch");
  return series::Series(x_k.rows(), x_k.cols(), ddim_step(x_k.values(), x0_hat.values(), k, k_prev, sched));
}

/// `count` descending steps starting at K and spaced as evenly as integers allow.
inline std::vector<int> ddim_steps(int K, int count) {
  if (count < 1 || count > K) throw std::invalid_argument("ddim_steps: count must be in [1, K]");
  std::vector<int> steps;
  for (int i = 0; i < count; ++i) {
    const int k = K - static_cast<int>(std::lround(static_cast<double>(i) * K / count));
    if (steps.empty() || k < steps.back()) steps.push_back(k);
  }
  return steps;
}

inline void validate_steps(std::span<const int> steps, const NoiseSchedule& sched) {
  if (steps.empty()) throw std::invalid_argument("sample_loop: empty step list");
  if (steps.front() != sched.K) {
    throw std::invalid_argument("sample_loop: step list must start at K=" + std::to_string(sched.K));
  }
  for (std::size_t i = 1; i < steps.size(); ++i) {
    if (steps[i] >= steps[i - 1]) throw std::invalid_argument("sample_loop: steps must be strictly descending");
  }
  if (steps.back() < 1) throw std::invalid_argument("sample_loop: steps must be >= 1");
}

/// Reverse process from a given x_K. `denoiser(x_k, k, cond)` returns a clean
/// estimate with the same shape as x_k; each step feeds it to ddim_step, the
/// last one stepping to 0.
template <class Denoiser, class Cond>
series::Series sample_loop_from(Denoiser&& denoiser, const Cond& cond, const NoiseSchedule& sched,
                                std::span<const int> steps, series::Series x) {
  validate_steps(steps, sched);
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const int k = steps[i];
    const int k_prev = i + 1 < steps.size() ? steps[i + 1] : 0;
    series::Series x0_hat = denoiser(static_cast<const series::Series&>(x), k, cond);
    if (x0_hat.rows() != x.rows() || x0_hat.cols() != x.cols()) {
      throw std::runtime_error("sample_loop: denoiser changed the shape at step " + std::to_string(k));
    }
    for (double v : x0_hat.values()) {
      if (!std::isfinite(v)) throw std::runtime_error("sample_loop: non-finite denoiser output at step " + std::to_string(k));
    }
    x = ddim_step(x, x0_hat, k, k_prev, sched);
  }
  return x;
}

/// Reverse process starting from a standard-normal draw fixed by `seed`.
template <class Denoiser, class Cond>
series::Series sample_loop(Denoiser&& denoiser, const Cond& cond, const NoiseSchedule& sched, std::span<const int> steps,
                           std::uint64_t seed, std::size_t rows, std::size_t cols) {
  Rng rng(seed);
  series::Series x(rows, cols, rng.normal_vector(rows * cols));
  return sample_loop_from(std::forward<Denoiser>(denoiser), cond, sched, steps, std::move(x));
}

}  // namespace cdpm::diffusion
