#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdpm/core/log.hpp"

namespace cdpm::series {

/// Row-major N x d block of observations: one row per time step, one column per channel.
class Series {
 public:
  Series() = default;
  Series(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), values_(rows * cols, fill) {}
  Series(std::size_t rows, std::size_t cols, std::vector<double> values)
      : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows_ * cols_) {
      throw std::invalid_argument("Series: " + std::to_string(rows_) + "x" + std::to_string(cols_) + " needs " +
                                  std::to_string(rows_ * cols_) + " values, got " + std::to_string(values_.size()));
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double& operator()(std::size_t t, std::size_t c) { return values_[t * cols_ + c]; }
  double operator()(std::size_t t, std::size_t c) const { return values_[t * cols_ + c]; }

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  std::span<const double> row(std::size_t t) const { return {values_.data() + t * cols_, cols_}; }

  std::vector<double> channel(std::size_t c) const {
    std::vector<double> out(rows_);
    for (std::size_t t = 0; t < rows_; ++t) out[t] = (*this)(t, c);
    return out;
  }

  Series slice_rows(std::size_t begin, std::size_t count) const {
    if (begin + count > rows_) throw std::out_of_range("Series::slice_rows: range exceeds " + std::to_string(rows_) + " rows");
    return Series(count, cols_,
                  std::vector<double>(values_.begin() + static_cast<std::ptrdiff_t>(begin * cols_),
                                      values_.begin() + static_cast<std::ptrdiff_t>((begin + count) * cols_)));
  }

  friend Series operator+(const Series& a, const Series& b) { return zip(a, b, [](double x, double y) { return x + y; }); }
  friend Series operator-(const Series& a, const Series& b) { return zip(a, b, [](double x, double y) { return x - y; }); }
  friend bool operator==(const Series&, const Series&) = default;

 private:
  template <class F>
  static Series zip(const Series& a, const Series& b, F f) {
    if (a.rows_ != b.rows_ || a.cols_ != b.cols_) throw std::invalid_argument("Series: shape mismatch");
    Series out(a.rows_, a.cols_);
    for (std::size_t i = 0; i < a.values_.size(); ++i) out.values_[i] = f(a.values_[i], b.values_[i]);
    return out;
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

inline constexpr double kDefaultStdFloor = 1e-5;

/// A historical window and the target window that follows it. `mean`/`std`
/// are per-channel statistics of `hist` and never depend on `target`.
struct WindowPair {
  Series hist;
  Series target;
  std::vector<double> mean;
  std::vector<double> std;
  bool normalized = false;
};

struct DecomposedWindow {
  Series trend;
  Series seasonal;
};

struct PatchStatistics {
  std::size_t patch_len = 0;
  std::size_t num_patches = 0;
  Series means;      // num_patches x d
  Series variances;  // num_patches x d
};

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> std;
  std::vector<std::size_t> floored;  // channels whose std was clamped
};

/// Per-channel mean and population standard deviation, with `std_floor` as a lower bound.
inline ChannelStats channel_stats(const Series& s, double std_floor = kDefaultStdFloor) {
  if (s.rows() < 2) throw std::invalid_argument("channel_stats: need at least 2 rows, got " + std::to_string(s.rows()));
  ChannelStats out;
  out.mean.assign(s.cols(), 0.0);
  out.std.assign(s.cols(), 0.0);
  const auto n = static_cast<double>(s.rows());
  for (std::size_t c = 0; c < s.cols(); ++c) {
    double m = 0.0;
    for (std::size_t t = 0; t < s.rows(); ++t) m += s(t, c);
    m /= n;
    double v = 0.0;
    for (std::size_t t = 0; t < s.rows(); ++t) v += (s(t, c) - m) * (s(t, c) - m);
    double sd = std::sqrt(v / n);
    if (sd < std_floor) {
      sd = std_floor;
      out.floored.push_back(c);
    }
    out.mean[c] = m;
    out.std[c] = sd;
  }
  return out;
}

inline Series standardize(const Series& s, const std::vector<double>& mean, const std::vector<double>& sd) {
  if (mean.size() != s.cols() || sd.size() != s.cols()) {
    throw std::invalid_argument("standardize: statistics for " + std::to_string(mean.size()) + " channels, series has " +
                                std::to_string(s.cols()));
  }
  Series out(s.rows(), s.cols());
  for (std::size_t t = 0; t < s.rows(); ++t)
    for (std::size_t c = 0; c < s.cols(); ++c) out(t, c) = (s(t, c) - mean[c]) / sd[c];
  return out;
}

/// Standardises hist with its own statistics and target with the same statistics.
inline WindowPair instance_normalize(const WindowPair& pair, double std_floor = kDefaultStdFloor) {
  if (pair.hist.cols() != pair.target.cols()) throw std::invalid_argument("instance_normalize: hist/target channel mismatch");
  auto stats = channel_stats(pair.hist, std_floor);
  if (!stats.floored.empty()) {
    log::warn("instance_normalize: " + std::to_string(stats.floored.size()) +
               " zero-variance channel(s) clamped to std floor");
  }
  WindowPair out;
  out.hist = standardize(pair.hist, stats.mean, stats.std);
  out.target = standardize(pair.target, stats.mean, stats.std);
  out.mean = std::move(stats.mean);
  out.std = std::move(stats.std);
  out.normalized = true;
  return out;
}

/// series * std + mean, per channel.
inline Series denormalize(const Series& s, const std::vector<double>& mean, const std::vector<double>& sd) {
  if (mean.size() != s.cols() || sd.size() != s.cols()) {
    throw std::invalid_argument("denormalize: statistics for " + std::to_string(mean.size()) + "/" +
                                std::to_string(sd.size()) + " channels, series has " + std::to_string(s.cols()));
  }
  Series out(s.rows(), s.cols());
  for (std::size_t t = 0; t < s.rows(); ++t)
    for (std::size_t c = 0; c < s.cols(); ++c) out(t, c) = s(t, c) * sd[c] + mean[c];
  return out;
}

inline WindowPair denormalize(const WindowPair& pair) {
  WindowPair out{denormalize(pair.hist, pair.mean, pair.std), denormalize(pair.target, pair.mean, pair.std), pair.mean,
                 pair.std, false};
  return out;
}

/// Centered moving average; the ends are padded by repeating the first and last rows.
inline Series moving_average_trend(const Series& s, std::size_t kernel) {
  if (kernel == 0 || kernel % 2 == 0) throw std::invalid_argument("moving_average_trend: kernel must be odd, got " + std::to_string(kernel));
  if (s.rows() == 0) throw std::invalid_argument("moving_average_trend: empty series");
  if (kernel > 2 * s.rows() - 1) {
    throw std::invalid_argument("moving_average_trend: kernel " + std::to_string(kernel) + " exceeds 2N-1 for N=" +
                                std::to_string(s.rows()));
  }
  const long n = static_cast<long>(s.rows());
  const long half = static_cast<long>(kernel / 2);
  Series out(s.rows(), s.cols());
  for (std::size_t c = 0; c < s.cols(); ++c) {
    for (long t = 0; t < n; ++t) {
      double acc = 0.0;
      for (long j = t - half; j <= t + half; ++j) acc += s(static_cast<std::size_t>(std::clamp(j, 0L, n - 1)), c);
      out(static_cast<std::size_t>(t), c) = acc / static_cast<double>(kernel);
    }
  }
  return out;
}

namespace detail {
inline std::atomic<std::size_t>& decompose_counter() {
  static std::atomic<std::size_t> count{0};
  return count;
}
}  // namespace detail

/// Number of decompose() calls since process start; used for wiring audits.
inline std::size_t decompose_call_count() { return detail::decompose_counter().load(); }

inline DecomposedWindow decompose(const Series& s, std::size_t kernel) {
  detail::decompose_counter().fetch_add(1, std::memory_order_relaxed);
  DecomposedWindow out;
  out.trend = moving_average_trend(s, kernel);
  out.seasonal = s - out.trend;
  return out;
}

inline std::size_t num_patches(std::size_t length, std::size_t patch_len) { return (length + patch_len - 1) / patch_len; }

/// Per-patch mean and population variance. A trailing partial patch is
/// completed by repeating the last row.
inline PatchStatistics patch_statistics(const Series& s, std::size_t patch_len) {
  if (patch_len == 0) throw std::invalid_argument("patch_statistics: patch length must be >= 1");
  if (s.rows() == 0) throw std::invalid_argument("patch_statistics: empty series");
  if (patch_len > s.rows()) {
    log::warn("patch_statistics: patch length " + std::to_string(patch_len) + " exceeds series length " +
              std::to_string(s.rows()) + "; using one padded patch");
  }
  PatchStatistics out;
  out.patch_len = patch_len;
  out.num_patches = num_patches(s.rows(), patch_len);
  out.means = Series(out.num_patches, s.cols());
  out.variances = Series(out.num_patches, s.cols());
  const auto h = static_cast<double>(patch_len);
  for (std::size_t p = 0; p < out.num_patches; ++p) {
    for (std::size_t c = 0; c < s.cols(); ++c) {
      auto at = [&](std::size_t j) { return s(std::min(p * patch_len + j, s.rows() - 1), c); };
      double m = 0.0;
      for (std::size_t j = 0; j < patch_len; ++j) m += at(j);
      m /= h;
      double v = 0.0;
      for (std::size_t j = 0; j < patch_len; ++j) v += (at(j) - m) * (at(j) - m);
      out.means(p, c) = m;
      out.variances(p, c) = v / h;
    }
  }
  return out;
}

}  // namespace cdpm::series
