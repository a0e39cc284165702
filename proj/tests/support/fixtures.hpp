#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include "cdpm/config.hpp"
#include "cdpm/data.hpp"
#include "cdpm/series.hpp"

namespace cdpm::testing {

/// Small model and window sizes so that training-level tests finish quickly.
inline Config tiny_config(Variant v = Variant::full) {
  Config c;
  c.variant = v;
  c.seq_len = 16;
  c.pred_len = 8;
  c.kernel = 5;
  c.patch_len = 4;
  c.d_model = 8;
  c.stat_hidden = 6;
  c.ddim_steps = 5;
  c.max_epochs = 3;
  c.eval_batch = 16;
  c.seed = 11;
  return c;
}

/// Ramp plus a period-6 wave in every channel.
inline series::Series wave_series(std::size_t rows, std::size_t cols) {
  series::Series s(rows, cols);
  for (std::size_t t = 0; t < rows; ++t)
    for (std::size_t c = 0; c < cols; ++c)
      s(t, c) = 0.05 * static_cast<double>(t) + std::sin(2.0 * M_PI * static_cast<double>(t) / 6.0 + static_cast<double>(c));
  return s;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("cdpm_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace cdpm::testing
