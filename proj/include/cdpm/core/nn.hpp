#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "cdpm/core/ops.hpp"
#include "cdpm/core/random.hpp"
#include "cdpm/core/tensor.hpp"

// Small parameter containers shared by the model modules.
namespace cdpm::nn {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline Tensor uniform_param(Shape shape, double bound, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(v), true);
}

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, double gain = 1.0) {
    const double bound = gain / std::sqrt(static_cast<double>(in));
    weight = uniform_param({in, out}, bound, rng);
    bias = uniform_param({out}, bound, rng);
  }

  Tensor operator()(const Tensor& x) const { return ops::linear(x, weight, bias); }

  void collect(const std::string& prefix, NamedTensors& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
  }
};

/// Length-preserving temporal convolution over [..., channels, len].
struct Conv1d {
  Tensor weight;  // [c_out, c_in, w]
  Tensor bias;    // [c_out]

  Conv1d() = default;
  Conv1d(std::size_t c_in, std::size_t c_out, std::size_t width, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(c_in * width));
    weight = uniform_param({c_out, c_in, width}, bound, rng);
    bias = uniform_param({c_out}, bound, rng);
  }

  Tensor operator()(const Tensor& x) const { return ops::conv1d(x, weight, bias); }

  void collect(const std::string& prefix, NamedTensors& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
  }
};

/// Linear -> GELU -> Linear.
struct Mlp {
  Linear fc1;
  Linear fc2;

  Mlp() = default;
  Mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) : fc1(in, hidden, rng), fc2(hidden, out, rng) {}

  Tensor operator()(const Tensor& x) const { return fc2(ops::gelu(fc1(x))); }

  void collect(const std::string& prefix, NamedTensors& out) const {
    fc1.collect(prefix + ".fc1", out);
    fc2.collect(prefix + ".fc2", out);
  }
};

inline std::size_t parameter_count(const NamedTensors& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

}  // namespace cdpm::nn
