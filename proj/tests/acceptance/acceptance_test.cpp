// Acceptance suite: one test per criterion, with a pass/fail summary line for
// each printed at the end of the run.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "cdpm/cdpm.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"
#include "support/helpers.hpp"

#ifndef CDPM_CLI_PATH
#error "CDPM_CLI_PATH must point at the cdpm executable"
#endif

namespace {

using namespace cdpm;
using cdpm::testing::gradcheck;
using cdpm::testing::random_series;
using cdpm::testing::random_tensor;
using series::Series;
namespace fs = std::filesystem;

constexpr double kGradTol = 1e-4;
constexpr double kFdStep = 1e-5;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void note(const std::string& s) { std::cout << "  | " << s << std::endl; }

std::string fmt(double v, int digits = 6) {
  std::ostringstream o;
  o.precision(digits);
  o << v;
  return o.str();
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + CDPM_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int rc = std::system(cmd.c_str());
  if (rc != 0) {
    std::ifstream in(log);
    std::cout << "  | command failed (" << rc << "): " << cmd << "\n" << in.rdbuf() << std::endl;
  }
  return rc;
}

std::string read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---- criterion 1 ------------------------------------------------------------

struct GradCase {
  std::string name;
  std::function<Tensor()> loss;
  std::vector<Tensor> inputs;
  std::vector<std::string> names = {};
};

std::vector<Tensor> with_params(std::vector<Tensor> inputs, const nn::NamedTensors& params) {
  for (const auto& [n, t] : params) inputs.push_back(t);
  return inputs;
}

std::vector<GradCase> op_cases(std::uint64_t seed) {
  auto x = random_tensor({2, 3, 4}, seed);
  auto y = random_tensor({2, 3, 4}, seed + 100);
  auto w = random_tensor({2, 3, 4}, seed + 200);
  auto s = random_tensor({1}, seed + 300);
  auto bias = random_tensor({4}, seed + 400);
  auto mod_scale = random_tensor({2, 4}, seed + 500);
  auto mod_shift = random_tensor({2, 4}, seed + 600);
  auto pos = random_tensor({2, 3, 4}, seed + 700, 0.1, 2.0);
  auto m_a = random_tensor({3, 4}, seed + 800);
  auto m_b = random_tensor({4, 5}, seed + 900);
  auto lin_w = random_tensor({4, 5}, seed + 1000);
  auto lin_b = random_tensor({5}, seed + 1100);
  auto conv_x = random_tensor({2, 3, 7}, seed + 1200);
  auto conv_k = random_tensor({4, 3, 3}, seed + 1300);
  auto conv_b = random_tensor({4}, seed + 1400);
  auto w35 = random_tensor({3, 5}, seed + 1500);
  auto w235 = random_tensor({2, 3, 5}, seed + 1600);
  auto w247 = random_tensor({2, 4, 7}, seed + 1700);
  auto w237 = random_tensor({2, 3, 7}, seed + 1800);
  auto w232 = random_tensor({2, 3, 2}, seed + 1900);
  auto w432 = random_tensor({2, 4, 3}, seed + 2000);
  auto dot = [](const Tensor& a, const Tensor& b) { return ops::sum(ops::mul(a, b)); };
  return {
      {"add", [=] { return dot(ops::add(x, y), w); }, {x, y}},
      {"sub", [=] { return dot(ops::sub(x, y), w); }, {x, y}},
      {"mul", [=] { return dot(ops::mul(x, y), w); }, {x, y}},
      {"mul_scalar", [=] { return dot(ops::mul_scalar(x, -1.7), w); }, {x}},
      {"add_scalar", [=] { return dot(ops::mul(ops::add_scalar(x, 0.3), x), w); }, {x}},
      {"scale", [=] { return dot(ops::scale(x, s), w); }, {x, s}},
      {"add_bias", [=] { return dot(ops::add_bias(x, bias), w); }, {x, bias}},
      {"matmul", [=] { return dot(ops::matmul(m_a, m_b), w35); }, {m_a, m_b}},
      {"linear", [=] { return dot(ops::linear(x, lin_w, lin_b), w235); }, {x, lin_w, lin_b}},
      {"linear_nobias", [=] { return dot(ops::linear(x, lin_w), w235); }, {x, lin_w}},
      {"reshape", [=] { return dot(ops::reshape(x, {4, 3, 2}), ops::reshape(w, {4, 3, 2})); }, {x}},
      {"transpose_last2", [=] { return dot(ops::transpose_last2(x), w432); }, {x}},
      {"conv1d", [=] { return dot(ops::conv1d(conv_x, conv_k, conv_b), w247); }, {conv_x, conv_k, conv_b}},
      {"layer_norm", [=] { return dot(ops::layer_norm(x, 1e-5), w); }, {x}},
      {"gelu", [=] { return dot(ops::gelu(x), w); }, {x}},
      {"softplus", [=] { return dot(ops::softplus(x), w); }, {x}},
      {"sqrt", [=] { return dot(ops::sqrt(pos), w); }, {pos}},
      {"signed_sqrt", [=] { return dot(ops::signed_sqrt(pos), w); }, {pos}},
      {"signed_sqrt_neg", [=] { return dot(ops::signed_sqrt(ops::mul_scalar(pos, -1.0)), w); }, {pos}},
      {"modulate", [=] { return dot(ops::modulate(x, mod_scale, mod_shift), w); },
       {x, mod_scale, mod_shift}},
      {"slice_last", [=] { return dot(ops::slice_last(x, 1, 2), w232); }, {x}},
      {"repeat_patches", [=] { return dot(ops::repeat_patches(x, 2, 7), w237); }, {x}},
      {"sum", [=] { return ops::mul(ops::sum(x), ops::sum(x)); }, {x}},
      {"mean", [=] { return ops::mul(ops::mean(x), ops::sum(y)); }, {x, y}},
      {"mse_loss", [=] { return ops::mse_loss(x, y); }, {x, y}},
  };
}

cdsm::CdsmConfig small_cdsm() {
  cdsm::CdsmConfig c;
  c.channels = 2;
  c.seq_len = 12;
  c.pred_len = 8;
  c.patch_len = 3;
  c.d_model = 4;
  c.stat_hidden = 3;
  return c;
}

std::vector<GradCase> module_cases(std::uint64_t seed) {
  std::vector<GradCase> out;
  const auto cc = small_cdsm();
  Rng rng(seed);
  const auto p = std::make_shared<cdsm::CdsmParams>(cdsm::CdsmParams::init(cc, rng));
  auto x = random_tensor({2, cc.pred_len, cc.channels}, seed + 1);
  auto wx = random_tensor({2, cc.pred_len, cc.channels}, seed + 2);
  auto wh = random_tensor({2, cc.pred_len, cc.d_model}, seed + 3);
  const std::vector<int> steps{1 + static_cast<int>(seed % 50), 1 + static_cast<int>((seed * 7) % 50)};
  auto stats = std::make_shared<std::vector<series::PatchStatistics>>();
  for (int b = 0; b < 2; ++b) stats->push_back(series::patch_statistics(random_series(cc.seq_len, cc.channels, seed + 10 + b), cc.patch_len));
  auto means = cdsm::stats_tensor({&(*stats)[0], &(*stats)[1]}, false);
  auto vars = cdsm::stats_tensor({&(*stats)[0], &(*stats)[1]}, true);
  auto z = random_tensor({2, cc.channels, cc.target_patches()}, seed + 4);
  auto wp = random_tensor({2, cc.channels, cc.target_patches()}, seed + 5);
  auto dot = [](const Tensor& a, const Tensor& b) { return ops::sum(ops::mul(a, b)); };

  nn::NamedTensors embed_params, adaln_params, stat_params;
  p->embed_conv.collect("conv", embed_params);
  p->embed_mlp.collect("mlp", embed_params);
  p->adaln_embed.proj.collect("proj", adaln_params);
  p->mlp_mu->collect("mu", stat_params);
  p->mlp_sigma->collect("sigma", stat_params);

  out.push_back({"cdsm.embed", [=] { return dot(cdsm::embed(x, *p), wh); }, with_params({x}, embed_params)});
  auto h = random_tensor({2, cc.pred_len, cc.d_model}, seed + 6);
  out.push_back({"cdsm.adaln", [=] { return dot(cdsm::adaln(h, steps, p->adaln_embed, *p), wh); }, with_params({h}, adaln_params)});
  out.push_back({"cdsm.predict_target_stats",
                 [=] {
                   auto ts = cdsm::predict_target_stats(means, vars, *p);
                   return ops::add(dot(ts.mu_hat, wp), dot(ts.sigma2_hat, z));
                 },
                 with_params({means, vars}, stat_params)});
  auto mu = random_tensor({2, cc.channels, cc.target_patches()}, seed + 7);
  auto s2 = random_tensor({2, cc.channels, cc.target_patches()}, seed + 8, 0.1, 2.0);
  out.push_back({"cdsm.conditional_draw", [=] { return dot(cdsm::conditional_draw(mu, s2, z, cc.patch_len, cc.pred_len), wx); },
                 {mu, s2, z}});
  out.push_back({"cdsm.network_path", [=] { return dot(cdsm::network_path(x, steps, *p), wx); },
                 with_params({x}, p->named_parameters())});
  out.push_back({"cdsm.denoise",
                 [=] {
                   const auto cond = cdsm::make_conditioning({&(*stats)[0], &(*stats)[1]}, z, *p);
                   return dot(cdsm::denoise(x, steps, &cond, *p), wx);
                 },
                 with_params({x}, p->named_parameters())});

  ptm::PtmConfig pc{cc.seq_len, cc.pred_len, true};
  const auto pp = std::make_shared<ptm::PtmParams>(ptm::PtmParams::init(pc, rng));
  auto hist = random_tensor({2, cc.seq_len, cc.channels}, seed + 9);
  out.push_back({"ptm.forward", [=] { return dot(ptm::ptm_forward(hist, *pp), wx); }, with_params({hist}, pp->named_parameters())});
  return out;
}

GradCase full_forward_case(std::uint64_t seed, Variant v) {
  Config cfg = cdpm::testing::tiny_config(v);
  cfg.d_model = 4;
  cfg.stat_hidden = 3;
  cfg.seed = seed;
  auto m = std::make_shared<model::Model>(cfg, 2);
  auto values = std::make_shared<Series>(cdpm::testing::wave_series(40, 2));
  Rng rng(seed + 31);
  for (auto& x : values->values()) x += 0.1 * rng.normal();
  data::WindowSet set(values.get(), {0, 40}, cfg.seq_len, cfg.pred_len);
  auto prepared = std::make_shared<std::vector<model::PreparedWindow>>();
  for (std::size_t i : {seed % set.size(), (seed * 5 + 3) % set.size()}) prepared->push_back(m->prepare(set.pair(i)));
  auto noise = std::make_shared<model::StepNoise>(m->draw_noise(2, rng));
  std::vector<Tensor> inputs;
  std::vector<std::string> names;
  for (const auto& [n, t] : m->named_parameters()) {
    names.push_back(n);
    inputs.push_back(t);
  }
  return {"full_forward." + to_string(v),
          [m, prepared, noise] { return m->loss(train::pointers(*prepared), *noise); },
          inputs, names};
}

TEST(Acceptance, Criterion1_GradientCorrectness) {
  const auto t0 = std::chrono::steady_clock::now();
  std::map<std::string, double> worst;
  std::map<std::string, std::string> where;
  std::size_t checks = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto cases = op_cases(seed);
    for (auto& c : module_cases(seed)) cases.push_back(std::move(c));
    for (auto v : kAllVariants) cases.push_back(full_forward_case(seed, v));
    for (auto& c : cases) {
      const auto r = gradcheck(c.loss, c.inputs, c.names, kFdStep);
      ++checks;
      if (r.max_rel_error >= worst[c.name]) {
        worst[c.name] = r.max_rel_error;
        where[c.name] = "seed " + std::to_string(seed) + " " + r.worst;
      }
      EXPECT_LT(r.max_rel_error, kGradTol) << c.name << " seed " << seed << ": " << r.worst;
    }
  }
  const double elapsed = seconds_since(t0);
  double overall = 0.0;
  for (const auto& [n, e] : worst) overall = std::max(overall, e);
  note(std::to_string(worst.size()) + " operations/modules x 20 seeds = " + std::to_string(checks) +
       " checks, max relative error " + fmt(overall, 3) + " (tolerance 1e-4), " + fmt(elapsed, 3) + " s");
  for (const auto& [n, e] : worst) {
    if (n.rfind("full_forward", 0) == 0) note(n + ": max rel err " + fmt(e, 3));
  }
  EXPECT_LT(elapsed, 60.0);
}

// ---- criterion 2 ------------------------------------------------------------

TEST(Acceptance, Criterion2_DecompositionAndNormalizationIdentities) {
  const auto t0 = std::chrono::steady_clock::now();
  double recon = 0.0, round_trip = 0.0;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    Rng rng(mix_seed(2, i));
    const std::size_t L = static_cast<std::size_t>(rng.uniform_int(8, 200));
    const std::size_t T = static_cast<std::size_t>(rng.uniform_int(1, 100));
    const std::size_t d = static_cast<std::size_t>(rng.uniform_int(1, 8));
    const double scale = std::pow(10.0, rng.uniform(-2.0, 3.0));
    const double offset = rng.uniform(-1e3, 1e3);
    Series hist = random_series(L, d, mix_seed(3, i), scale), target = random_series(T, d, mix_seed(4, i), scale);
    for (auto& v : hist.values()) v += offset;
    for (auto& v : target.values()) v += offset;
    const std::size_t kernel = std::min<std::size_t>(25, 2 * L - 1) | 1;
    const auto dec = series::decompose(hist, kernel);
    for (std::size_t j = 0; j < hist.size(); ++j) {
      recon = std::max(recon, std::abs(dec.trend.values()[j] + dec.seasonal.values()[j] - hist.values()[j]));
    }
    const series::WindowPair raw{hist, target, {}, {}, false};
    const auto norm = series::instance_normalize(raw);
    const auto back = series::denormalize(norm);
    round_trip = std::max(round_trip, cdpm::testing::max_abs_diff(back.hist.values(), hist.values()));
    round_trip = std::max(round_trip, cdpm::testing::max_abs_diff(back.target.values(), target.values()));
  }
  note("1000 random windows: max reconstruction error " + fmt(recon, 3) + ", max normalize round-trip error " +
       fmt(round_trip, 3) + " (limit 1e-9), " + fmt(seconds_since(t0), 3) + " s");
  EXPECT_LE(recon, 1e-9);
  EXPECT_LE(round_trip, 1e-9);
}

// ---- criterion 3 ------------------------------------------------------------

TEST(Acceptance, Criterion3_ScheduleProperties) {
  const auto s = diffusion::build_schedule(50, 1e-4, 0.5);
  bool decreasing = true;
  for (int k = 2; k <= 50; ++k) decreasing = decreasing && s.alpha_bar_at(k) < s.alpha_bar_at(k - 1);
  EXPECT_TRUE(decreasing);
  EXPECT_NEAR(s.beta.front(), 1e-4, 1e-12);
  EXPECT_NEAR(s.beta.back(), 0.5, 1e-12);
  Rng rng(33);
  const std::size_t n = 100000;
  std::vector<double> x0 = rng.normal_vector(n), eps = rng.normal_vector(n);
  const auto xk = diffusion::q_sample(x0, 50, eps, s);
  const double mean = std::accumulate(xk.begin(), xk.end(), 0.0) / static_cast<double>(n);
  double var = 0.0;
  for (double v : xk) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  note("alpha_bar strictly decreasing: " + std::string(decreasing ? "yes" : "no") + ", beta_1 = " + fmt(s.beta.front(), 17) +
       ", beta_K = " + fmt(s.beta.back(), 17) + ", alpha_bar_K = " + fmt(s.alpha_bar_at(50), 3));
  note("q_sample at k=K over 1e5 draws: mean " + fmt(mean, 4) + ", variance " + fmt(var, 5));
  EXPECT_LE(std::abs(mean), 0.02);
  EXPECT_GE(var, 0.9);
  EXPECT_LE(var, 1.1);
}

// ---- criterion 4 ------------------------------------------------------------

TEST(Acceptance, Criterion4_SamplerCorrectness) {
  synth::SynthSpec spec;
  spec.n = 600;
  const auto ds = synth::generate(spec);
  const auto sched = diffusion::build_schedule(50, 1e-4, 0.5);
  double worst = 0.0;
  for (std::uint64_t w = 0; w < 20; ++w) {
    const auto raw = ds.values.slice_rows(w * 20, 144);
    const auto norm = series::instance_normalize({raw.slice_rows(0, 96), raw.slice_rows(96, 48), {}, {}, false});
    const auto truth = series::decompose(norm.target, 25).seasonal;
    auto oracle = [](const Series&, int, const Series& x0) { return x0; };
    for (int count : {50, 10, 1}) {
      const auto steps = diffusion::ddim_steps(50, count);
      const auto out = diffusion::sample_loop(oracle, truth, sched, steps, mix_seed(9, w), 48, 3);
      worst = std::max(worst, cdpm::testing::max_abs_diff(out.values(), truth.values()));
    }
  }
  note("perfect-oracle DDIM over 20 windows x {50, 10, 1} steps: max error " + fmt(worst, 3) + " (limit 1e-9)");
  EXPECT_LE(worst, 1e-9);

  Config cfg = cdpm::testing::tiny_config();
  model::Model m(cfg, 3);
  data::WindowSet set(&ds.values, {0, 200}, cfg.seq_len, cfg.pred_len);
  train::EvalOptions eo;
  eo.seed = 123;
  std::vector<Series> first, second;
  eo.on_window = [&](const train::WindowOutput& o) { first.push_back(o.prediction); };
  train::evaluate(m, set, eo);
  eo.on_window = [&](const train::WindowOutput& o) { second.push_back(o.prediction); };
  train::evaluate(m, set, eo);
  bool identical = first.size() == second.size();
  for (std::size_t i = 0; identical && i < first.size(); ++i) identical = std::ranges::equal(first[i].values(), second[i].values());
  note("same seed, " + std::to_string(first.size()) + " forecasts bit-identical: " + (identical ? "yes" : "no"));
  EXPECT_TRUE(identical);
}

// ---- criterion 5 ------------------------------------------------------------

/// Desk-scale settings shared by the learning criteria.
Config desk_config() {
  Config c;
  c.d_model = 32;
  c.stat_hidden = 32;
  c.max_epochs = 200;
  c.select_ddim_steps = true;
  return c;
}

TEST(Acceptance, Criterion5_DeskScaleLearning) {
  synth::SynthSpec spec;  // N=4000, d=3, linear trend, one sinusoid per channel, noise 0.1
  ASSERT_EQ(spec.n, 4000u);
  ASSERT_EQ(spec.channels, 3u);
  ASSERT_EQ(spec.noise, 0.1);
  Config cfg = desk_config();
  cfg.dataset_name = "synthetic";
  cfg.seq_len = 96;
  cfg.pred_len = 48;
  experiment::Experiment ex(synth::generate(spec), cfg);
  const experiment::RunOptions quiet{"", false, true};

  const auto full = experiment::run_variant(ex, cfg, quiet);
  Config sw_cfg = cfg;
  sw_cfg.variant = Variant::swapped;
  const auto swapped = experiment::run_variant(ex, sw_cfg, quiet);
  const auto base = experiment::run_baselines(ex, cfg, true);

  std::cout << experiment::ablation_table({full, swapped}, base);
  note("CDPM: " + std::to_string(full.fit.history.size()) + " epochs (best " + std::to_string(full.fit.best_epoch) + "), " +
       std::to_string(full.ddim_steps) + " DDIM steps chosen on validation, " + fmt(full.seconds, 4) + " s");
  note("CDPM6: " + std::to_string(swapped.fit.history.size()) + " epochs, " + std::to_string(swapped.ddim_steps) +
       " DDIM steps, " + fmt(swapped.seconds, 4) + " s");
  const double vs_repeat = 1.0 - full.test.mse / base.repeat_last.mse;
  const double vs_linear = full.test.mse / base.plain_linear.mse - 1.0;
  note("(a) MSE reduction vs repeat-last: " + fmt(100 * vs_repeat, 4) + "% (need >= 30%)");
  note("(b) MSE relative to plain-linear: " + fmt(100 * vs_linear, 4) + "% (need <= +15%)");
  ASSERT_TRUE(full.test.trend_mse && swapped.test.trend_mse);
  note("(c) trend MSE CDPM " + fmt(*full.test.trend_mse, 4) + " vs CDPM6 " + fmt(*swapped.test.trend_mse, 4) +
       "; seasonal MSE CDPM " + fmt(*full.test.seasonal_mse, 4) + " vs CDPM6 " + fmt(*swapped.test.seasonal_mse, 4));

  EXPECT_LT(full.seconds, 600.0) << "CDPM train + eval exceeded 10 minutes";
  EXPECT_LE(full.fit.history.size(), 200u);
  EXPECT_LE(full.test.mse, 0.7 * base.repeat_last.mse) << "(a)";
  EXPECT_LE(full.test.mse, 1.15 * base.plain_linear.mse) << "(b)";
  EXPECT_LT(*full.test.trend_mse, *swapped.test.trend_mse) << "(c) trend";
  EXPECT_LT(*full.test.seasonal_mse, *swapped.test.seasonal_mse) << "(c) seasonal";
}

// ---- criterion 6 ------------------------------------------------------------

TEST(Acceptance, Criterion6_AblationWiring) {
  const auto dir = cdpm::testing::temp_dir("acceptance_ablate");
  synth::SynthSpec spec;
  spec.n = 500;
  const auto ds = synth::generate(spec);
  data::write_csv((dir / "syn.csv").string(), ds);
  synth::write_components_csv((dir / "syn.components.csv").string(), ds);
  const std::string common = "--data \"" + (dir / "syn.csv").string() + "\" --truth \"" + (dir / "syn.components.csv").string() +
                             "\" --seq-len 32 --pred-len 16 --kernel 9 --patch-len 4 --d-model 8 --epochs 2 --ddim-steps 5 "
                             "--set stat_hidden=8 --out \"" + (dir / "out").string() + "\" --log-level warn";
  ASSERT_EQ(run_cli("ablate " + common, dir / "ablate.log"), 0);

  fs::path report;
  for (const auto& e : fs::directory_iterator(dir / "out")) {
    if (fs::exists(e.path() / "ablation.json")) report = e.path();
  }
  ASSERT_FALSE(report.empty()) << "no ablation.json written";
  const auto j = report::json::parse(read_all(report / "ablation.json"));
  ASSERT_EQ(j["rows"].size(), 7u);
  std::vector<std::string> labels;
  for (const auto& row : j["rows"]) {
    labels.push_back(row["label"]);
    EXPECT_TRUE(row["test"]["mse"].is_number());
    EXPECT_TRUE(row["test"]["mae"].is_number());
  }
  EXPECT_EQ(labels, (std::vector<std::string>{"CDPM", "CDPM1", "CDPM2", "CDPM3", "CDPM4", "CDPM5", "CDPM6"}));
  EXPECT_TRUE(j.contains("config_hash") && j.contains("seed") && j.contains("version"));
  EXPECT_TRUE(j["baselines"].contains("plain_linear"));
  const auto table = read_all(report / "ablation.md");
  EXPECT_NE(table.find("| Model | Variant | MSE | MAE |"), std::string::npos);
  std::cout << table;
  for (const auto& row : j["rows"]) {
    EXPECT_TRUE(fs::exists(dir / "out" / row["config_hash"].get<std::string>() / "model.ckpt")) << row["label"];
  }

  // no_cond: forecasts and training outputs ignore the historical patch statistics.
  Config cfg = cdpm::testing::tiny_config(Variant::no_cond);
  data::WindowSet set(&ds.values, {0, 200}, cfg.seq_len, cfg.pred_len);
  auto max_change = [&](Variant v) {
    cfg.variant = v;
    model::Model m(cfg, 3);
    std::vector<model::PreparedWindow> a, b;
    for (std::size_t i = 0; i < 8; ++i) a.push_back(m.prepare(set.pair(i * 10)));
    b = a;
    Rng rng(4);
    for (auto& w : b) {
      for (auto& s : w.cond_stats.means.values()) s += 5.0 * rng.normal();
      for (auto& s : w.cond_stats.variances.values()) s = s * 3.0 + 1.0;
    }
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8};
    const auto fa = m.forecast(train::pointers(a), seeds), fb = m.forecast(train::pointers(b), seeds);
    Rng n1(5), n2(5);
    const auto la = m.full_forward(train::pointers(a), m.draw_noise(8, n1)).total;
    const auto lb = m.full_forward(train::pointers(b), m.draw_noise(8, n2)).total;
    double diff = cdpm::testing::max_abs_diff(la.data(), lb.data());
    for (std::size_t i = 0; i < fa.size(); ++i) diff = std::max(diff, cdpm::testing::max_abs_diff(fa[i].total.values(), fb[i].total.values()));
    return diff;
  };
  const double no_cond = max_change(Variant::no_cond), full = max_change(Variant::full);
  note("perturbing historical patch statistics: max output change no_cond = " + fmt(no_cond, 3) + ", full = " + fmt(full, 3));
  EXPECT_EQ(no_cond, 0.0);
  EXPECT_GT(full, 0.0);
}

// ---- criterion 7 ------------------------------------------------------------

TEST(Acceptance, Criterion7_Etth1WithinLinearBaseline) {
  const char* path = std::getenv("CDPM_ETTH1_CSV");
  if (path == nullptr || *path == '\0') GTEST_SKIP() << "set CDPM_ETTH1_CSV to the ETTh1 csv to run this criterion";
  const auto t0 = std::chrono::steady_clock::now();
  Config cfg = desk_config();
  cfg.data = path;
  cfg.dataset_name = "ETTh1";
  cfg.seq_len = 192;
  cfg.pred_len = 168;
  cfg.split = "6:2:2";
  cfg.max_epochs = 50;
  auto ds = data::load_csv(path);
  note("ETTh1: " + std::to_string(ds.rows()) + " rows x " + std::to_string(ds.channels()) + " channels");
  experiment::Experiment ex(std::move(ds), cfg);
  const auto full = experiment::run_variant(ex, cfg, {"", false, false});
  const auto base = experiment::run_baselines(ex, cfg, true);
  const double elapsed = seconds_since(t0);
  std::cout << experiment::ablation_table({full}, base);
  note("CDPM test MSE " + fmt(full.test.mse, 5) + " vs plain-linear " + fmt(base.plain_linear.mse, 5) + " (" +
       fmt(100 * (full.test.mse / base.plain_linear.mse - 1.0), 4) + "%, need <= +15%), total " + fmt(elapsed / 60, 3) + " min");
  EXPECT_LE(full.test.mse, 1.15 * base.plain_linear.mse);
  EXPECT_LT(elapsed, 45 * 60.0);
}

// ---- criterion 8 ------------------------------------------------------------

TEST(Acceptance, Criterion8_Determinism) {
  const auto dir = cdpm::testing::temp_dir("acceptance_determinism");
  synth::SynthSpec spec;
  spec.n = 400;
  data::write_csv((dir / "syn.csv").string(), synth::generate(spec));
  const std::string common = "train --data \"" + (dir / "syn.csv").string() +
                             "\" --seq-len 32 --pred-len 16 --kernel 9 --patch-len 4 --d-model 8 --epochs 3 --ddim-steps 10 "
                             "--set stat_hidden=8 --seed 77 --log-level warn --out ";
  ASSERT_EQ(run_cli(common + "\"" + (dir / "a").string() + "\"", dir / "a.log"), 0);
  ASSERT_EQ(run_cli(common + "\"" + (dir / "b").string() + "\"", dir / "b.log"), 0);
  std::vector<fs::path> runs;
  for (const auto& e : fs::directory_iterator(dir / "a")) runs.push_back(e.path().filename());
  ASSERT_EQ(runs.size(), 1u);
  const auto& hash = runs.front();
  for (const char* file : {"model.ckpt", "report.json"}) {
    const auto a = read_all(dir / "a" / hash / file), b = read_all(dir / "b" / hash / file);
    EXPECT_FALSE(a.empty()) << file;
    EXPECT_EQ(a, b) << file << " differs between runs";
    note(std::string(file) + ": " + std::to_string(a.size()) + " bytes, identical: " + (a == b ? "yes" : "no"));
  }
}

// ---- summary ------------------------------------------------------------------

class CriteriaSummary : public ::testing::EmptyTestEventListener {
 public:
  void OnTestEnd(const ::testing::TestInfo& info) override {
    const auto* r = info.result();
    std::string status = r->Skipped() ? "SKIP" : r->Passed() ? "PASS" : "FAIL";
    std::string name = info.name();
    const auto us = name.find('_');
    std::string number = name.substr(std::string("Criterion").size(), us - std::string("Criterion").size());
    std::string title = name.substr(us + 1);
    lines_.push_back("criterion " + number + ": " + status + "  " + title + " (" + fmt(static_cast<double>(r->elapsed_time()) / 1000.0, 4) +
                     " s)");
    std::cout << lines_.back() << std::endl;
  }
  void OnTestProgramEnd(const ::testing::UnitTest&) override {
    std::cout << "\n==== acceptance summary ====\n";
    for (const auto& l : lines_) std::cout << l << "\n";
    std::cout << std::flush;
  }

 private:
  std::vector<std::string> lines_;
};

}  // namespace

int main(int argc, char** argv) {
  ::testing::InitGoogleTest(&argc, argv);
  log::set_level(log::Level::warn);
  ::testing::UnitTest::GetInstance()->listeners().Append(new CriteriaSummary);
  return RUN_ALL_TESTS();
}
