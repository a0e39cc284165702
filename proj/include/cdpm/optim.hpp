#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdpm/core/nn.hpp"

namespace cdpm::optim {

/// Adam with bias-corrected moments.
class Adam {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam() = default;
  Adam(nn::NamedTensors params, Options opts) : params_(std::move(params)), opts_(opts) {
    for (auto& [name, t] : params_) {
      m_.emplace_back(t.numel(), 0.0);
      v_.emplace_back(t.numel(), 0.0);
    }
  }

  double lr() const { return opts_.lr; }
  void set_lr(double lr) { opts_.lr = lr; }
  long step_count() const { return t_; }
  const nn::NamedTensors& params() const { return params_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

  void zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
  }

  /// One update from the gradients currently held by the parameters.
  /// A parameter without a gradient buffer is treated as having zero gradient.
  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& t = params_[i].second;
      if (!t.has_grad()) {
        // Zero gradient: moments decay, parameter moves only if moments are nonzero.
        for (auto& m : m_[i]) m *= opts_.beta1;
        for (auto& v : v_[i]) v *= opts_.beta2;
      } else {
        const auto g = t.grad();
        for (std::size_t j = 0; j < g.size(); ++j) {
          m_[i][j] = opts_.beta1 * m_[i][j] + (1.0 - opts_.beta1) * g[j];
          v_[i][j] = opts_.beta2 * v_[i][j] + (1.0 - opts_.beta2) * g[j] * g[j];
        }
      }
      auto w = t.mutable_data();
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double mh = m_[i][j] / c1;
        const double vh = v_[i][j] / c2;
        w[j] -= opts_.lr * mh / (std::sqrt(vh) + opts_.eps);
      }
    }
  }

  /// Restores moments and step count, e.g. from a checkpoint.
  void load_state(long step, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v) {
    if (m.size() != params_.size() || v.size() != params_.size()) throw std::invalid_argument("Adam::load_state: parameter count mismatch");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (m[i].size() != params_[i].second.numel() || v[i].size() != params_[i].second.numel()) {
        throw std::invalid_argument("Adam::load_state: size mismatch for " + params_[i].first);
      }
    }
    t_ = step;
    m_ = std::move(m);
    v_ = std::move(v);
  }

 private:
  nn::NamedTensors params_;
  Options opts_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  long t_ = 0;
};

/// Deep copy of parameter values, used to hold the best epoch's weights.
struct Snapshot {
  std::vector<std::vector<double>> values;
  std::vector<std::vector<double>> m, v;
  long step = 0;

  static Snapshot take(const nn::NamedTensors& params, const Adam* opt = nullptr) {
    Snapshot s;
    for (const auto& [name, t] : params) s.values.push_back(t.to_vector());
    if (opt) {
      s.m = opt->first_moments();
      s.v = opt->second_moments();
      s.step = opt->step_count();
    }
    return s;
  }

  void restore(nn::NamedTensors& params, Adam* opt = nullptr) const {
    if (params.size() != values.size()) throw std::invalid_argument("Snapshot::restore: parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto w = params[i].second.mutable_data();
      std::copy(values[i].begin(), values[i].end(), w.begin());
    }
    if (opt && !m.empty()) opt->load_state(step, m, v);
  }
};

}  // namespace cdpm::optim
