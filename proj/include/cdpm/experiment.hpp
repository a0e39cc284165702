#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cdpm/baselines.hpp"
#include "cdpm/checkpoint.hpp"
#include "cdpm/config.hpp"
#include "cdpm/core/log.hpp"
#include "cdpm/data.hpp"
#include "cdpm/model.hpp"
#include "cdpm/report.hpp"
#include "cdpm/trainer.hpp"

// End-to-end runs: split a dataset, train a variant, evaluate it and write
// the checkpoint and report.
namespace cdpm::experiment {

using series::Series;

/// A dataset cut into train/val/test window sets. Window sets point into
/// this object, so it is neither copied nor moved.
class Experiment {
 public:
  Experiment(data::Dataset ds, const Config& cfg) : dataset_(std::move(ds)) {
    splits_ = data::chronological_split(dataset_.rows(), cfg.split_spec());
    values_ = dataset_.values;
    if (dataset_.true_trend) true_trend_ = *dataset_.true_trend;
    if (dataset_.true_seasonal) true_seasonal_ = *dataset_.true_seasonal;
    if (cfg.global_scale) {
      const auto scaler = data::Scaler::fit(dataset_.values, splits_.train, cfg.std_floor);
      values_ = scaler.transform(values_);
      if (true_trend_) true_trend_ = scaler.transform(*true_trend_);
      if (true_seasonal_) true_seasonal_ = series::standardize(*true_seasonal_, std::vector<double>(scaler.mean.size(), 0.0), scaler.std);
    }
    train_ = data::WindowSet(&values_, splits_.train, cfg.seq_len, cfg.pred_len, cfg.train_stride);
    val_ = data::WindowSet(&values_, splits_.val, cfg.seq_len, cfg.pred_len, cfg.eval_stride);
    test_ = data::WindowSet(&values_, splits_.test, cfg.seq_len, cfg.pred_len, cfg.eval_stride);
    if (train_.empty() || val_.empty() || test_.empty()) {
      throw std::invalid_argument("experiment: a split is shorter than L+T=" + std::to_string(cfg.seq_len + cfg.pred_len) +
                                  " (train " + std::to_string(splits_.train.size()) + ", val " +
                                  std::to_string(splits_.val.size()) + ", test " + std::to_string(splits_.test.size()) +
                                  " rows)");
    }
  }
  Experiment(const Experiment&) = delete;
  Experiment& operator=(const Experiment&) = delete;

  const data::Dataset& dataset() const { return dataset_; }
  const Series& values() const { return values_; }
  const data::Splits& splits() const { return splits_; }
  const data::WindowSet& train() const { return train_; }
  const data::WindowSet& val() const { return val_; }
  const data::WindowSet& test() const { return test_; }
  const Series* true_trend() const { return true_trend_ ? &*true_trend_ : nullptr; }
  const Series* true_seasonal() const { return true_seasonal_ ? &*true_seasonal_ : nullptr; }

 private:
  data::Dataset dataset_;
  Series values_;
  std::optional<Series> true_trend_;
  std::optional<Series> true_seasonal_;
  data::Splits splits_;
  data::WindowSet train_, val_, test_;
};

/// Compatibility check between a config and an already built experiment.
inline void check_compatible(const Experiment& ex, const Config& cfg) {
  if (ex.train().seq_len() != cfg.seq_len || ex.train().pred_len() != cfg.pred_len) {
    throw std::invalid_argument("experiment windows do not match the configured L/T");
  }
}

struct VariantResult {
  Config config;
  std::size_t parameter_count = 0;
  train::FitResult fit;
  int ddim_steps = 0;
  std::optional<train::StepSelection> step_selection;
  train::Metrics val;
  train::Metrics test;
  std::string checkpoint_path;
  std::string report_path;
  double seconds = 0.0;
};

struct RunOptions {
  std::filesystem::path out_dir = "results";
  bool write_files = true;
  bool quiet = false;
};

inline std::function<void(const train::EpochRecord&)> epoch_logger(const std::string& tag, bool quiet) {
  if (quiet) return {};
  return [tag](const train::EpochRecord& r) {
    log::info(tag + " epoch " + std::to_string(r.epoch) + " lr " + std::to_string(r.lr) + " train " +
              std::to_string(r.train_loss) + " val " + std::to_string(r.val_loss) + (r.improved ? " *" : "") + " (" +
              std::to_string(r.seconds) + " s)");
  };
}

inline train::EvalOptions eval_options(const Experiment& ex, const Config& cfg) {
  train::EvalOptions o;
  o.seed = cfg.seed;
  o.ddim_steps = cfg.ddim_steps;
  o.batch = cfg.eval_batch;
  o.true_trend = ex.true_trend();
  o.true_seasonal = ex.true_seasonal();
  return o;
}

inline report::json variant_json(const VariantResult& r) {
  auto j = report::envelope("train", r.config);
  j["label"] = variant_label(r.config.variant);
  j["parameters"] = r.parameter_count;
  j["training"] = report::to_json(r.fit);
  j["ddim_steps"] = r.ddim_steps;
  if (r.step_selection) {
    report::json sel = report::json::array();
    for (const auto& [steps, loss] : r.step_selection->losses) sel.push_back({{"steps", steps}, {"val_mse", loss}});
    j["ddim_step_selection"] = std::move(sel);
  }
  j["metrics"] = {{"val", report::to_json(r.val)}, {"test", report::to_json(r.test)}};
  return j;
}

/// Trains one variant, evaluates it on validation and test windows and, if
/// requested, writes model.ckpt and report.json under <out>/<config hash>/.
inline VariantResult run_variant(const Experiment& ex, const Config& cfg, const RunOptions& opts = {}) {
  cfg.validate();
  check_compatible(ex, cfg);
  const auto t0 = std::chrono::steady_clock::now();
  VariantResult r;
  r.config = cfg;
  model::Model m(cfg, ex.values().cols());
  r.parameter_count = nn::parameter_count(m.named_parameters());
  if (!opts.quiet) {
    log::info(variant_label(cfg.variant) + " (" + to_string(cfg.variant) + "): " + std::to_string(r.parameter_count) +
              " parameters, " + std::to_string(ex.train().size()) + " train / " + std::to_string(ex.val().size()) +
              " val / " + std::to_string(ex.test().size()) + " test windows");
  }
  auto outcome = train::train_model(m, ex.train(), ex.val(), epoch_logger(variant_label(cfg.variant), opts.quiet));
  r.fit = outcome.fit;
  if (cfg.select_ddim_steps) {
    r.step_selection = train::select_ddim_steps(m, ex.val(), cfg.seed, cfg.eval_batch);
    m.set_ddim_steps(r.step_selection->steps);
    if (!opts.quiet) log::info(variant_label(cfg.variant) + " sampler steps chosen on validation: " + std::to_string(r.step_selection->steps));
  }
  r.ddim_steps = m.config().ddim_steps;
  auto eo = eval_options(ex, cfg);
  eo.ddim_steps = r.ddim_steps;
  r.val = train::evaluate(m, ex.val(), eo);
  r.test = train::evaluate(m, ex.test(), eo);
  if (opts.write_files) {
    const auto dir = report::run_dir(opts.out_dir, cfg);
    auto ck = checkpoint::from_model(m, &outcome.optimizer);
    ck.meta["best_epoch"] = std::to_string(r.fit.best_epoch);
    ck.meta["best_val_loss"] = checkpoint::exact(r.fit.best_val);
    r.checkpoint_path = (dir / "model.ckpt").string();
    checkpoint::save(r.checkpoint_path, ck);
    r.report_path = (dir / "report.json").string();
    report::write(r.report_path, variant_json(r));
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!opts.quiet) {
    log::info(variant_label(cfg.variant) + " test mse " + std::to_string(r.test.mse) + " mae " + std::to_string(r.test.mae) +
              " (" + std::to_string(r.seconds) + " s)");
  }
  return r;
}

struct BaselineResult {
  train::Metrics repeat_last;
  train::Metrics plain_linear;
  train::FitResult linear_fit;
};

inline BaselineResult run_baselines(const Experiment& ex, const Config& cfg, bool quiet = false) {
  BaselineResult b;
  b.repeat_last = baselines::repeat_last_metrics(ex.test());
  baselines::PlainLinear lin(cfg);
  b.linear_fit = lin.train(ex.train(), ex.val(), epoch_logger("linear", quiet));
  b.plain_linear = lin.evaluate(ex.test());
  if (!quiet) {
    log::info("baselines: repeat-last mse " + std::to_string(b.repeat_last.mse) + ", plain-linear mse " +
              std::to_string(b.plain_linear.mse));
  }
  return b;
}

inline report::json baseline_json(const BaselineResult& b, const Config& cfg) {
  auto j = report::envelope("baseline", cfg);
  j["metrics"] = {{"repeat_last", report::to_json(b.repeat_last)}, {"plain_linear", report::to_json(b.plain_linear)}};
  j["plain_linear_training"] = report::to_json(b.linear_fit);
  return j;
}

/// Rows in the order given; renders as a fixed-width text table.
inline std::string ablation_table(const std::vector<VariantResult>& rows, const std::optional<BaselineResult>& base) {
  std::string out = "| Model | Variant | MSE | MAE | Trend MSE | Seasonal MSE |\n|---|---|---|---|---|---|\n";
  char buf[256];
  auto opt = [](const std::optional<double>& v) {
    if (!v) return std::string("-");
    char b[32];
    std::snprintf(b, sizeof(b), "%.4f", *v);
    return std::string(b);
  };
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "| %s | %s | %.4f | %.4f | %s | %s |\n", variant_label(r.config.variant).c_str(),
                  to_string(r.config.variant).c_str(), r.test.mse, r.test.mae, opt(r.test.trend_mse).c_str(),
                  opt(r.test.seasonal_mse).c_str());
    out += buf;
  }
  if (base) {
    std::snprintf(buf, sizeof(buf), "| Repeat-last | baseline | %.4f | %.4f | - | - |\n", base->repeat_last.mse,
                  base->repeat_last.mae);
    out += buf;
    std::snprintf(buf, sizeof(buf), "| Linear | baseline | %.4f | %.4f | - | - |\n", base->plain_linear.mse,
                  base->plain_linear.mae);
    out += buf;
  }
  return out;
}

inline report::json ablation_json(const Config& base_cfg, const std::vector<VariantResult>& rows,
                                  const std::optional<BaselineResult>& base) {
  auto j = report::envelope("ablate", base_cfg);
  j.erase("variant");
  report::json table = report::json::array();
  for (const auto& r : rows) {
    report::json row;
    row["label"] = variant_label(r.config.variant);
    row["variant"] = to_string(r.config.variant);
    row["config_hash"] = r.config.hash();
    row["parameters"] = r.parameter_count;
    row["best_epoch"] = r.fit.best_epoch;
    row["test"] = report::to_json(r.test);
    table.push_back(std::move(row));
  }
  j["rows"] = std::move(table);
  if (base) j["baselines"] = {{"repeat_last", report::to_json(base->repeat_last)}, {"plain_linear", report::to_json(base->plain_linear)}};
  return j;
}

/// One CSV per window with columns time_index, channel, truth, prediction,
/// trend_component, seasonal_component. The component columns are empty for
/// variants that do not separate the two parts.
inline std::string forecast_csv(const train::WindowOutput& w) {
  std::string out = "time_index,channel,truth,prediction,trend_component,seasonal_component\n";
  for (std::size_t t = 0; t < w.truth.rows(); ++t) {
    for (std::size_t c = 0; c < w.truth.cols(); ++c) {
      out += std::to_string(w.target_start + t) + "," + std::to_string(c) + "," + checkpoint::exact(w.truth(t, c)) + "," +
             checkpoint::exact(w.prediction(t, c)) + "," + (w.trend ? checkpoint::exact((*w.trend)(t, c)) : "") + "," +
             (w.seasonal ? checkpoint::exact((*w.seasonal)(t, c)) : "") + "\n";
    }
  }
  return out;
}

}  // namespace cdpm::experiment
