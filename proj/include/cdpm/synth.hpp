#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdpm/core/random.hpp"
#include "cdpm/data.hpp"

namespace cdpm::synth {

enum class TrendKind { linear, quadratic, none };

inline TrendKind trend_kind_from_string(const std::string& s) {
  if (s == "linear") return TrendKind::linear;
  if (s == "quadratic") return TrendKind::quadratic;
  if (s == "none") return TrendKind::none;
  throw std::invalid_argument("unknown trend kind '" + s + "'");
}

struct SynthSpec {
  std::size_t n = 4000;
  std::size_t channels = 3;
  TrendKind trend = TrendKind::linear;
  /// Total rise of the trend over the whole series; each channel draws a
  /// slope in [-trend_scale, trend_scale].
  double trend_scale = 3.0;
  double period = 24.0;
  double amplitude = 1.0;
  double noise = 0.1;
  std::uint64_t seed = 7;
};

/// values = trend + seasonal + N(0, noise^2), one sinusoid per channel with a
/// random phase. The clean components are kept on the dataset.
inline data::Dataset generate(const SynthSpec& spec) {
  if (spec.n == 0 || spec.channels == 0) throw std::invalid_argument("synth: empty dataset requested");
  if (!(spec.period > 0.0)) throw std::invalid_argument("synth: period must be positive");
  if (spec.noise < 0.0) throw std::invalid_argument("synth: negative noise level");
  Rng rng(spec.seed);
  std::vector<double> offset(spec.channels), slope(spec.channels), phase(spec.channels);
  for (std::size_t c = 0; c < spec.channels; ++c) {
    offset[c] = rng.uniform(-1.0, 1.0);
    slope[c] = rng.uniform(-spec.trend_scale, spec.trend_scale);
    phase[c] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  data::Dataset ds;
  ds.name = "synthetic";
  ds.frequency = "step";
  series::Series trend(spec.n, spec.channels), seasonal(spec.n, spec.channels), values(spec.n, spec.channels);
  const double span = static_cast<double>(spec.n);
  for (std::size_t t = 0; t < spec.n; ++t) {
    const double u = static_cast<double>(t) / span;
    for (std::size_t c = 0; c < spec.channels; ++c) {
      double tr = 0.0;
      if (spec.trend == TrendKind::linear) tr = offset[c] + slope[c] * u;
      if (spec.trend == TrendKind::quadratic) tr = offset[c] + slope[c] * u * u;
      trend(t, c) = tr;
      seasonal(t, c) = spec.amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / spec.period + phase[c]);
    }
  }
  for (std::size_t t = 0; t < spec.n; ++t)
    for (std::size_t c = 0; c < spec.channels; ++c) values(t, c) = trend(t, c) + seasonal(t, c) + spec.noise * rng.normal();
  for (std::size_t c = 0; c < spec.channels; ++c) ds.columns.push_back("c" + std::to_string(c));
  ds.values = std::move(values);
  ds.true_trend = std::move(trend);
  ds.true_seasonal = std::move(seasonal);
  return ds;
}

/// Writes the clean components side by side: trend_<c>, seasonal_<c>.
inline void write_components_csv(const std::string& path, const data::Dataset& ds) {
  if (!ds.true_trend || !ds.true_seasonal) throw std::invalid_argument("write_components_csv: dataset has no components");
  data::Dataset both;
  const auto d = ds.channels();
  both.values = series::Series(ds.rows(), 2 * d);
  for (std::size_t c = 0; c < d; ++c) {
    both.columns.push_back("trend_" + std::to_string(c));
  }
  for (std::size_t c = 0; c < d; ++c) {
    both.columns.push_back("seasonal_" + std::to_string(c));
  }
  for (std::size_t t = 0; t < ds.rows(); ++t)
    for (std::size_t c = 0; c < d; ++c) {
      both.values(t, c) = (*ds.true_trend)(t, c);
      both.values(t, d + c) = (*ds.true_seasonal)(t, c);
    }
  data::write_csv(path, both);
}

/// Attaches components written by write_components_csv to `ds`.
inline void attach_components(data::Dataset& ds, const std::string& path) {
  auto both = data::load_csv(path);
  const auto d = ds.channels();
  if (both.rows() != ds.rows() || both.channels() != 2 * d) {
    throw std::invalid_argument("attach_components: '" + path + "' does not match the dataset shape");
  }
  series::Series trend(ds.rows(), d), seasonal(ds.rows(), d);
  for (std::size_t t = 0; t < ds.rows(); ++t)
    for (std::size_t c = 0; c < d; ++c) {
      trend(t, c) = both.values(t, c);
      seasonal(t, c) = both.values(t, d + c);
    }
  ds.true_trend = std::move(trend);
  ds.true_seasonal = std::move(seasonal);
}

}  // namespace cdpm::synth
