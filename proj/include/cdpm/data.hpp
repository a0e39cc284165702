#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdpm/config.hpp"
#include "cdpm/core/log.hpp"
#include "cdpm/series.hpp"

namespace cdpm::data {

using series::Series;

struct Dataset {
  std::string name;
  Series values;                        // N x d
  std::vector<std::string> timestamps;  // empty or N entries
  std::vector<std::string> columns;     // d channel names
  std::string frequency;
  // Ground-truth components when known (synthetic data).
  std::optional<Series> true_trend;
  std::optional<Series> true_seasonal;

  std::size_t rows() const { return values.rows(); }
  std::size_t channels() const { return values.cols(); }
};

struct CsvOptions {
  bool forward_fill = false;
  char delimiter = ',';
};

namespace detail {

inline std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, delim)) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == delim) cells.emplace_back();
  return cells;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\"");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\"");
  return s.substr(b, e - b + 1);
}

inline std::optional<double> parse_number(const std::string& raw) {
  const std::string s = trim(raw);
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const char* first = s.data();
  if (*first == '+') ++first;
  auto [end, ec] = std::from_chars(first, s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) return std::nullopt;
  return v;
}

inline bool is_missing(const std::string& raw) {
  const std::string s = trim(raw);
  return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == "null" || s == "?";
}

}  // namespace detail

/// Reads a numeric table. A header row is detected when its cells are not
/// all numeric; a leading timestamp column is detected when the first cell of
/// the first data row is not numeric. Missing cells are rejected unless
/// `forward_fill` is set.
inline Dataset load_csv(const std::string& path, const CsvOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_csv: cannot open '" + path + "'");
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    rows.push_back(detail::split_line(line, opts.delimiter));
  }
  if (rows.empty()) throw std::runtime_error("load_csv: '" + path + "' is empty");

  Dataset ds;
  ds.name = path;
  std::size_t first_data = 0;
  bool header = false;
  for (const auto& c : rows[0]) {
    if (!detail::parse_number(c) && !detail::is_missing(c)) header = true;
  }
  // A first row that is all non-numeric except possibly the timestamp is a header;
  // a data row with a text timestamp has numbers in the remaining cells.
  if (header && rows[0].size() > 1) {
    bool rest_numeric = true;
    for (std::size_t j = 1; j < rows[0].size(); ++j) {
      if (!detail::parse_number(rows[0][j])) rest_numeric = false;
    }
    header = !rest_numeric;
  }
  if (header) first_data = 1;
  if (first_data >= rows.size()) throw std::runtime_error("load_csv: '" + path + "' has a header but no data rows");

  const auto width = rows[first_data].size();
  const bool has_time = !detail::parse_number(rows[first_data][0]) && !detail::is_missing(rows[first_data][0]);
  const std::size_t c0 = has_time ? 1 : 0;
  if (width <= c0) throw std::runtime_error("load_csv: no numeric columns in '" + path + "'");
  const std::size_t d = width - c0;
  if (header) {
    if (rows[0].size() != width) throw std::runtime_error("load_csv: header has " + std::to_string(rows[0].size()) +
                                                          " columns, data has " + std::to_string(width));
    for (std::size_t j = c0; j < width; ++j) ds.columns.push_back(detail::trim(rows[0][j]));
  } else {
    for (std::size_t j = 0; j < d; ++j) ds.columns.push_back("c" + std::to_string(j));
  }

  const std::size_t n = rows.size() - first_data;
  Series values(n, d);
  std::size_t filled = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = rows[first_data + i];
    const std::size_t file_row = first_data + i + 1;
    if (r.size() != width) {
      throw std::runtime_error("load_csv: row " + std::to_string(file_row) + " has " + std::to_string(r.size()) +
                               " columns, expected " + std::to_string(width));
    }
    if (has_time) ds.timestamps.push_back(detail::trim(r[0]));
    for (std::size_t j = 0; j < d; ++j) {
      const auto& cell = r[c0 + j];
      if (auto v = detail::parse_number(cell); v && std::isfinite(*v)) {
        values(i, j) = *v;
      } else if (detail::is_missing(cell)) {
        if (!opts.forward_fill) {
          throw std::runtime_error("load_csv: missing value at row " + std::to_string(file_row) + ", column " +
                                   std::to_string(c0 + j + 1) + " (enable forward fill to impute)");
        }
        if (i == 0) {
          throw std::runtime_error("load_csv: missing value in the first data row, column " + std::to_string(c0 + j + 1) +
                                   " cannot be forward-filled");
        }
        values(i, j) = values(i - 1, j);
        ++filled;
      } else {
        throw std::runtime_error("load_csv: non-numeric cell '" + detail::trim(cell) + "' at row " +
                                 std::to_string(file_row) + ", column " + std::to_string(c0 + j + 1));
      }
    }
  }
  if (filled > 0) log::warn("load_csv: forward-filled " + std::to_string(filled) + " missing value(s)");
  ds.values = std::move(values);
  return ds;
}

/// Writes values (and timestamps when present) with 17 significant digits.
inline void write_csv(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_csv: cannot open '" + path + "'");
  const bool has_time = !ds.timestamps.empty();
  if (has_time) out << "date";
  for (std::size_t j = 0; j < ds.channels(); ++j) {
    if (has_time || j > 0) out << ',';
    out << (j < ds.columns.size() ? ds.columns[j] : "c" + std::to_string(j));
  }
  out << '\n';
  char buf[40];
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    if (has_time) out << ds.timestamps[i];
    for (std::size_t j = 0; j < ds.channels(); ++j) {
      if (has_time || j > 0) out << ',';
      auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), ds.values(i, j));
      out.write(buf, end - buf);
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write_csv: write to '" + path + "' failed");
}

/// Half-open row range [begin, end).
struct Range {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool operator==(const Range&) const = default;
};

struct Splits {
  Range train, val, test;
};

/// Boundaries at floor(N * cumulative fraction).
inline Splits chronological_split(std::size_t n, const SplitSpec& spec) {
  const double total = spec.train + spec.val + spec.test;
  if (!(spec.train > 0 && spec.val > 0 && spec.test > 0) || std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("chronological_split: fractions must be positive and sum to 1");
  }
  // Small tolerance so that e.g. 10 * 0.6 lands on 6, not 5.999...
  auto cut = [n](double frac) {
    return std::min(n, static_cast<std::size_t>(std::floor(static_cast<double>(n) * frac + 1e-9)));
  };
  const std::size_t a = cut(spec.train);
  const std::size_t b = cut(spec.train + spec.val);
  Splits s{{0, a}, {a, b}, {b, n}};
  if (s.train.size() == 0 || s.val.size() == 0 || s.test.size() == 0) {
    throw std::invalid_argument("chronological_split: an empty segment results for N=" + std::to_string(n));
  }
  return s;
}

/// Sliding windows inside one segment, materialised lazily.
class WindowSet {
 public:
  WindowSet() = default;
  WindowSet(const Series* source, Range segment, std::size_t seq_len, std::size_t pred_len, std::size_t stride = 1)
      : source_(source), segment_(segment), L_(seq_len), T_(pred_len), stride_(stride) {
    if (stride == 0) throw std::invalid_argument("WindowSet: stride must be positive");
    if (segment.end > source->rows()) throw std::out_of_range("WindowSet: segment exceeds series");
    if (segment.size() < L_ + T_) {
      log::warn("make_windows: segment of " + std::to_string(segment.size()) + " rows is shorter than L+T=" +
                std::to_string(L_ + T_) + "; no windows");
      count_ = 0;
    } else {
      count_ = (segment.size() - L_ - T_) / stride_ + 1;
    }
  }

  std::size_t size() const { return count_; }
  bool empty() const { return count_ == 0; }
  std::size_t seq_len() const { return L_; }
  std::size_t pred_len() const { return T_; }
  const Series& source() const { return *source_; }

  /// Row of the source where window i's history starts.
  std::size_t start(std::size_t i) const { return segment_.begin + i * stride_; }
  /// Row of the source where window i's target starts.
  std::size_t target_start(std::size_t i) const { return start(i) + L_; }

  series::WindowPair pair(std::size_t i) const {
    if (i >= count_) throw std::out_of_range("WindowSet: window " + std::to_string(i) + " of " + std::to_string(count_));
    return {source_->slice_rows(start(i), L_), source_->slice_rows(start(i) + L_, T_), {}, {}, false};
  }

 private:
  const Series* source_ = nullptr;
  Range segment_;
  std::size_t L_ = 0, T_ = 0, stride_ = 1, count_ = 0;
};

/// All windows of a segment as WindowPairs (count = len - L - T + 1 at stride 1).
inline std::vector<series::WindowPair> make_windows(const Series& segment, std::size_t seq_len, std::size_t pred_len,
                                                    std::size_t stride = 1) {
  WindowSet set(&segment, {0, segment.rows()}, seq_len, pred_len, stride);
  std::vector<series::WindowPair> out;
  out.reserve(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) out.push_back(set.pair(i));
  return out;
}

/// Dataset-level z-scoring fitted on the training rows only.
struct Scaler {
  std::vector<double> mean;
  std::vector<double> std;

  static Scaler fit(const Series& values, Range rows, double floor = series::kDefaultStdFloor) {
    auto stats = series::channel_stats(values.slice_rows(rows.begin, rows.size()), floor);
    return {stats.mean, stats.std};
  }
  Series transform(const Series& s) const { return series::standardize(s, mean, std); }
  Series inverse(const Series& s) const { return series::denormalize(s, mean, std); }
};

}  // namespace cdpm::data
