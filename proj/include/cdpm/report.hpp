#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

#include "cdpm/config.hpp"
#include "cdpm/core/io.hpp"
#include "cdpm/core/version.hpp"
#include "cdpm/trainer.hpp"

// Machine-readable run reports. Reports carry no wall-clock data so that two
// runs of the same configuration produce identical files.
namespace cdpm::report {

using json = nlohmann::ordered_json;

inline json to_json(const train::Metrics& m) {
  json j;
  j["mse"] = m.mse;
  j["mae"] = m.mae;
  j["windows"] = m.windows;
  if (m.trend_mse) j["trend_mse"] = *m.trend_mse;
  if (m.seasonal_mse) j["seasonal_mse"] = *m.seasonal_mse;
  return j;
}

inline json to_json(const train::FitResult& f) {
  json j;
  j["best_epoch"] = f.best_epoch;
  j["best_val_loss"] = f.best_val;
  j["epochs_run"] = f.history.size();
  j["early_stopped"] = f.early_stopped;
  json hist = json::array();
  for (const auto& r : f.history) {
    hist.push_back({{"epoch", r.epoch}, {"lr", r.lr}, {"train_loss", r.train_loss}, {"val_loss", r.val_loss}});
  }
  j["history"] = std::move(hist);
  return j;
}

inline json config_json(const Config& cfg) {
  json j = json::object();
  for (const auto& [k, v] : cfg.to_map()) j[k] = v;
  return j;
}

/// Common envelope: command, version, config hash, seed and full config.
inline json envelope(const std::string& command, const Config& cfg) {
  json j;
  j["command"] = command;
  j["version"] = kVersion;
  j["config_hash"] = cfg.hash();
  j["seed"] = cfg.seed;
  j["dataset"] = cfg.dataset_name;
  j["variant"] = to_string(cfg.variant);
  j["config"] = config_json(cfg);
  return j;
}

/// <out>/<config hash>/
inline std::filesystem::path run_dir(const std::filesystem::path& out, const Config& cfg) { return out / cfg.hash(); }

inline void write(const std::filesystem::path& path, const json& j) { io::write_file_atomic(path, j.dump(2) + "\n"); }

}  // namespace cdpm::report
