// cdpm: train, evaluate and ablate the decomposed diffusion forecaster.

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cdpm/cdpm.hpp"

namespace fs = std::filesystem;
using namespace cdpm;

namespace {

struct CommonArgs {
  std::string config_file;
  std::string out = "results";
  std::string truth;
  std::string log_level = "info";
  std::vector<std::string> overrides;
  // flag name -> (config key, value)
  std::map<std::string, std::pair<std::string, std::string>> flags;
  std::vector<std::string> switches;  // boolean config keys set to true
};

void add_common(CLI::App* app, CommonArgs& a) {
  app->add_option("--config", a.config_file, "key=value config file; flags override it");
  app->add_option("--out", a.out, "results directory")->capture_default_str();
  app->add_option("--truth", a.truth, "CSV of true components (from `cdpm synth`) for component scoring");
  app->add_option("--log-level", a.log_level, "debug|info|warn|error|off")->capture_default_str();
  app->add_option("--set", a.overrides, "extra key=value config override (repeatable)");
  const std::vector<std::pair<std::string, std::string>> valued{
      {"--data", "data"},         {"--dataset-name", "dataset_name"}, {"--seq-len", "seq_len"},
      {"--pred-len", "pred_len"}, {"--split", "split"},               {"--variant", "variant"},
      {"--seed", "seed"},         {"--ddim-steps", "ddim_steps"},     {"--kernel", "kernel"},
      {"--patch-len", "patch_len"}, {"--d-model", "d_model"},         {"--epochs", "max_epochs"},
      {"--patience", "patience"}, {"--batch-size", "batch_size"},     {"--lr", "lr"},
      {"--conv-width", "conv_width"}, {"--train-stride", "train_stride"}, {"--eval-stride", "eval_stride"},
  };
  for (const auto& [flag, key] : valued) {
    a.flags[flag] = {key, ""};
    app->add_option(flag, a.flags[flag].second, "config '" + key + "'");
  }
  for (const auto& [flag, key] : std::vector<std::pair<std::string, std::string>>{
           {"--forward-fill", "forward_fill"}, {"--global-scale", "global_scale"},
           {"--full-sampling-validation", "full_sampling_validation"},
           {"--select-ddim-steps", "select_ddim_steps"}}) {
    app->add_flag_callback(flag, [&a, key = key] { a.switches.push_back(key); }, "set '" + key + "'");
  }
}

log::Level parse_level(const std::string& s) {
  if (s == "debug") return log::Level::debug;
  if (s == "info") return log::Level::info;
  if (s == "warn") return log::Level::warn;
  if (s == "error") return log::Level::error;
  if (s == "off") return log::Level::off;
  throw CLI::ValidationError("--log-level", "unknown level '" + s + "'");
}

/// Defaults, then the config file, then flags, then --set overrides.
Config resolve(CLI::App* app, const CommonArgs& a, Config base = {}) {
  log::set_level(parse_level(a.log_level));
  Config cfg = a.config_file.empty() ? base : Config::from_file(a.config_file, base);
  for (const auto& [flag, kv] : a.flags) {
    if (app->count(flag) > 0) cfg.set(kv.first, kv.second);
  }
  for (const auto& key : a.switches) cfg.set(key, "true");
  for (const auto& o : a.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw CLI::ValidationError("--set", "expected key=value, got '" + o + "'");
    cfg.set(o.substr(0, eq), o.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

data::Dataset load_dataset(const Config& cfg, const CommonArgs& a) {
  if (cfg.data.empty()) throw CLI::ValidationError("--data", "a data file is required");
  auto ds = data::load_csv(cfg.data, {cfg.forward_fill});
  ds.name = cfg.dataset_name;
  if (!a.truth.empty()) synth::attach_components(ds, a.truth);
  log::info("loaded " + cfg.data + ": " + std::to_string(ds.rows()) + " rows x " + std::to_string(ds.channels()) + " channels");
  return ds;
}

void print_metrics(const std::string& name, const train::Metrics& m) {
  std::cout << name << ": mse=" << m.mse << " mae=" << m.mae << " windows=" << m.windows;
  if (m.trend_mse) std::cout << " trend_mse=" << *m.trend_mse;
  if (m.seasonal_mse) std::cout << " seasonal_mse=" << *m.seasonal_mse;
  std::cout << "\n";
}

struct CheckpointArgs {
  std::string path;
  std::vector<std::size_t> windows;
};

/// Model from a checkpoint, with data-side settings taken from the command line.
std::pair<Config, model::Model> load_model(CLI::App* app, const CommonArgs& a, const CheckpointArgs& c) {
  auto ck = checkpoint::load(c.path);
  Config cfg = resolve(app, a, ck.config);
  for (const char* key : {"seq_len", "pred_len", "variant", "kernel", "patch_len", "d_model", "conv_width", "stat_hidden", "K",
                          "beta_1", "beta_K", "schedule"}) {
    if (cfg.get(key) != ck.config.get(key)) {
      throw CLI::ValidationError(std::string("--") + key, "cannot change '" + std::string(key) + "' of a trained checkpoint");
    }
  }
  return {cfg, checkpoint::to_model(ck)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decomposed conditional diffusion forecaster"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  CommonArgs train_a, eval_a, fc_a, ablate_a, base_a;
  CheckpointArgs eval_c, fc_c;

  auto* train_cmd = app.add_subcommand("train", "train one variant and evaluate it on the test split");
  add_common(train_cmd, train_a);

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(eval_cmd, eval_a);
  eval_cmd->add_option("--checkpoint", eval_c.path, "model.ckpt written by train")->required();

  auto* fc_cmd = app.add_subcommand("forecast", "write per-window forecast CSVs from a checkpoint");
  add_common(fc_cmd, fc_a);
  fc_cmd->add_option("--checkpoint", fc_c.path, "model.ckpt written by train")->required();
  fc_cmd->add_option("--window", fc_c.windows, "test window index (repeatable; default 0)");

  synth::SynthSpec spec;
  std::string synth_out = "synthetic.csv";
  std::string trend_kind = "linear";
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset with known components");
  synth_cmd->add_option("--out", synth_out, "output CSV; components go to <stem>.components.csv")->capture_default_str();
  synth_cmd->add_option("--rows", spec.n, "number of rows")->capture_default_str();
  synth_cmd->add_option("--channels", spec.channels, "number of channels")->capture_default_str();
  synth_cmd->add_option("--trend", trend_kind, "linear|quadratic|none")->capture_default_str();
  synth_cmd->add_option("--trend-scale", spec.trend_scale, "max total trend rise")->capture_default_str();
  synth_cmd->add_option("--period", spec.period, "sinusoid period in steps")->capture_default_str();
  synth_cmd->add_option("--amplitude", spec.amplitude, "sinusoid amplitude")->capture_default_str();
  synth_cmd->add_option("--noise", spec.noise, "Gaussian noise std")->capture_default_str();
  synth_cmd->add_option("--seed", spec.seed, "generator seed")->capture_default_str();

  std::vector<std::string> variant_names;
  bool no_baselines = false;
  auto* ablate_cmd = app.add_subcommand("ablate", "train every variant and write the comparison table");
  add_common(ablate_cmd, ablate_a);
  ablate_cmd->add_option("--variants", variant_names, "subset of variants (default: all seven)");
  ablate_cmd->add_flag("--no-baselines", no_baselines, "skip the repeat-last and linear rows");

  auto* base_cmd = app.add_subcommand("baseline", "repeat-last and plain-linear baselines");
  add_common(base_cmd, base_a);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      const Config cfg = resolve(train_cmd, train_a);
      experiment::Experiment ex(load_dataset(cfg, train_a), cfg);
      const auto r = experiment::run_variant(ex, cfg, {train_a.out, true, false});
      print_metrics("test", r.test);
      std::cout << "checkpoint: " << r.checkpoint_path << "\nreport: " << r.report_path << "\n";
    } else if (*eval_cmd) {
      auto [cfg, m] = load_model(eval_cmd, eval_a, eval_c);
      experiment::Experiment ex(load_dataset(cfg, eval_a), cfg);
      const auto metrics = train::evaluate(m, ex.test(), experiment::eval_options(ex, cfg));
      auto j = report::envelope("eval", cfg);
      j["checkpoint"] = eval_c.path;
      j["metrics"] = {{"test", report::to_json(metrics)}};
      const auto path = report::run_dir(eval_a.out, cfg) / "eval.json";
      report::write(path, j);
      print_metrics("test", metrics);
      std::cout << "report: " << path.string() << "\n";
    } else if (*fc_cmd) {
      auto [cfg, m] = load_model(fc_cmd, fc_a, fc_c);
      experiment::Experiment ex(load_dataset(cfg, fc_a), cfg);
      if (fc_c.windows.empty()) fc_c.windows.push_back(0);
      const auto dir = report::run_dir(fc_a.out, cfg);
      auto eo = experiment::eval_options(ex, cfg);
      for (auto w : fc_c.windows) {
        if (w >= ex.test().size()) {
          throw std::out_of_range("window " + std::to_string(w) + " outside the " + std::to_string(ex.test().size()) +
                                  " test windows");
        }
      }
      // Evaluate the whole split so each window gets the same noise stream as in `eval`.
      eo.on_window = [&](const train::WindowOutput& out) {
        for (auto w : fc_c.windows) {
          if (w == out.index) {
            const auto path = dir / ("forecast_w" + std::to_string(w) + ".csv");
            io::write_file_atomic(path, experiment::forecast_csv(out));
            std::cout << "forecast: " << path.string() << "\n";
          }
        }
      };
      train::evaluate(m, ex.test(), eo);
    } else if (*synth_cmd) {
      spec.trend = synth::trend_kind_from_string(trend_kind);
      const auto ds = synth::generate(spec);
      data::write_csv(synth_out, ds);
      fs::path comp = synth_out;
      comp.replace_extension(".components.csv");
      synth::write_components_csv(comp.string(), ds);
      std::cout << "data: " << synth_out << "\ncomponents: " << comp.string() << "\n";
    } else if (*ablate_cmd) {
      const Config base = resolve(ablate_cmd, ablate_a);
      experiment::Experiment ex(load_dataset(base, ablate_a), base);
      std::vector<Variant> variants;
      for (const auto& n : variant_names) variants.push_back(variant_from_string(n));
      if (variants.empty()) variants.assign(kAllVariants.begin(), kAllVariants.end());
      std::vector<experiment::VariantResult> rows;
      for (auto v : variants) {
        Config cfg = base;
        cfg.variant = v;
        rows.push_back(experiment::run_variant(ex, cfg, {ablate_a.out, true, false}));
      }
      std::optional<experiment::BaselineResult> b;
      if (!no_baselines) b = experiment::run_baselines(ex, base);
      const auto dir = report::run_dir(ablate_a.out, base);
      const auto table = experiment::ablation_table(rows, b);
      report::write(dir / "ablation.json", experiment::ablation_json(base, rows, b));
      io::write_file_atomic(dir / "ablation.md", table);
      std::cout << table << "report: " << (dir / "ablation.json").string() << "\n";
    } else if (*base_cmd) {
      const Config cfg = resolve(base_cmd, base_a);
      experiment::Experiment ex(load_dataset(cfg, base_a), cfg);
      const auto b = experiment::run_baselines(ex, cfg);
      const auto path = report::run_dir(base_a.out, cfg) / "baseline.json";
      report::write(path, experiment::baseline_json(b, cfg));
      print_metrics("repeat_last", b.repeat_last);
      print_metrics("plain_linear", b.plain_linear);
      std::cout << "report: " << path.string() << "\n";
    }
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "cdpm: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
