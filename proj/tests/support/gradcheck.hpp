#pragma once

// Central finite-difference oracle. Independent of the reverse-mode path: it
// only evaluates the forward function with perturbed inputs.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "cdpm/core/tensor.hpp"

namespace cdpm::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "<input>[<index>] analytic=<a> numeric=<n>"
};

// The floor keeps near-zero entries from being judged on central-difference
// rounding noise (about eps * |f| / h, i.e. 1e-11 to 1e-10 at h = 1e-5).
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares the gradient of `loss_fn()` with respect to each of `inputs`
/// against central differences with step `h`.
inline GradCheckResult gradcheck(const std::function<Tensor()>& loss_fn, std::vector<Tensor> inputs,
                                 const std::vector<std::string>& names = {}, double h = 1e-5) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  backward(loss_fn());
  GradCheckResult result;
  for (std::size_t n = 0; n < inputs.size(); ++n) {
    auto& t = inputs[n];
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    auto values = t.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      NoGradGuard guard;
      values[i] = orig + h;
      const double fp = loss_fn().item();
      values[i] = orig - h;
      const double fm = loss_fn().item();
      values[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double err = relative_error(analytic[i], numeric);
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        char buf[96];
        std::snprintf(buf, sizeof(buf), "] analytic=%.6e numeric=%.6e", analytic[i], numeric);
        result.worst = (n < names.size() ? names[n] : "input" + std::to_string(n)) + "[" + std::to_string(i) + buf;
      }
    }
  }
  return result;
}

}  // namespace cdpm::testing
