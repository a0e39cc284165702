#pragma once

#include <array>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdpm/diffusion.hpp"

namespace cdpm {

enum class Variant {
  full,
  no_cond,         // CDPM^1: conditioning path removed
  linear_trend,    // CDPM^2: trend module is a single linear map
  no_norm,         // CDPM^3: no instance normalization
  no_cond_linear,  // CDPM^4: 1 and 2 together
  coupled,         // CDPM^5: denoiser on the undecomposed series, no trend module
  swapped,         // CDPM^6: denoiser on the trend, trend module on the seasonal part
};

inline constexpr std::array<Variant, 7> kAllVariants{Variant::full,           Variant::no_cond, Variant::linear_trend,
                                                     Variant::no_norm,        Variant::no_cond_linear,
                                                     Variant::coupled,        Variant::swapped};

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_cond: return "no_cond";
    case Variant::linear_trend: return "linear_trend";
    case Variant::no_norm: return "no_norm";
    case Variant::no_cond_linear: return "no_cond_linear";
    case Variant::coupled: return "coupled";
    case Variant::swapped: return "swapped";
  }
  return "?";
}

/// Short table label, e.g. "CDPM1" for no_cond.
inline std::string variant_label(Variant v) {
  switch (v) {
    case Variant::full: return "CDPM";
    case Variant::no_cond: return "CDPM1";
    case Variant::linear_trend: return "CDPM2";
    case Variant::no_norm: return "CDPM3";
    case Variant::no_cond_linear: return "CDPM4";
    case Variant::coupled: return "CDPM5";
    case Variant::swapped: return "CDPM6";
  }
  return "?";
}

inline Variant variant_from_string(const std::string& s) {
  for (auto v : kAllVariants) {
    if (to_string(v) == s || variant_label(v) == s) return v;
  }
  throw std::invalid_argument("unknown variant '" + s +
                              "' (expected full, no_cond, linear_trend, no_norm, no_cond_linear, coupled or swapped)");
}

/// Chronological split fractions.
struct SplitSpec {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;

  static SplitSpec parse(const std::string& text) {
    std::vector<double> parts;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ':')) {
      try {
        parts.push_back(std::stod(item));
      } catch (const std::exception&) {
        throw std::invalid_argument("split '" + text + "': expected a:b:c");
      }
    }
    if (parts.size() != 3) throw std::invalid_argument("split '" + text + "': expected three parts");
    const double total = parts[0] + parts[1] + parts[2];
    for (double p : parts) {
      if (!(p > 0.0)) throw std::invalid_argument("split '" + text + "': every part must be positive");
    }
    return {parts[0] / total, parts[1] / total, parts[2] / total};
  }
};

/// Every knob of a run. Serialised as flat key=value text; the canonical
/// text is what the config hash is taken over.
struct Config {
  // data
  std::string data;
  std::string dataset_name = "dataset";
  std::string split = "6:2:2";
  bool forward_fill = false;
  bool global_scale = false;
  std::size_t seq_len = 192;
  std::size_t pred_len = 96;
  std::size_t train_stride = 1;
  std::size_t eval_stride = 1;

  // model
  Variant variant = Variant::full;
  std::size_t kernel = 25;
  std::size_t patch_len = 8;
  std::size_t d_model = 256;
  std::size_t conv_width = 3;
  std::size_t stat_hidden = 64;
  double std_floor = series::kDefaultStdFloor;

  // diffusion
  int K = 50;
  double beta_1 = 1e-4;
  double beta_K = 0.5;
  diffusion::ScheduleKind schedule = diffusion::ScheduleKind::cosine_interp;
  int ddim_steps = 50;
  // Pick the sampler step count on the validation split after training.
  bool select_ddim_steps = false;

  // optimisation
  double lr = 1e-3;
  std::size_t batch_size = 16;
  std::size_t patience = 10;
  std::size_t max_epochs = 100;
  double lr_gamma = 0.95;
  bool full_sampling_validation = false;
  std::size_t eval_batch = 64;
  std::uint64_t seed = 2024;

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      if (v == 0) throw std::invalid_argument(std::string("config: ") + name + " must be positive");
    };
    positive(seq_len, "seq_len");
    positive(pred_len, "pred_len");
    positive(train_stride, "train_stride");
    positive(eval_stride, "eval_stride");
    positive(kernel, "kernel");
    positive(patch_len, "patch_len");
    positive(d_model, "d_model");
    positive(conv_width, "conv_width");
    positive(stat_hidden, "stat_hidden");
    positive(batch_size, "batch_size");
    positive(patience, "patience");
    positive(max_epochs, "max_epochs");
    positive(eval_batch, "eval_batch");
    if (kernel % 2 == 0) throw std::invalid_argument("config: kernel must be odd");
    if (conv_width % 2 == 0) throw std::invalid_argument("config: conv_width must be odd");
    if (patch_len > pred_len) throw std::invalid_argument("config: patch_len must not exceed pred_len");
    if (seq_len < 2) throw std::invalid_argument("config: seq_len must be at least 2");
    if (K < 1) throw std::invalid_argument("config: K must be >= 1");
    if (ddim_steps < 1 || ddim_steps > K) throw std::invalid_argument("config: ddim_steps must be in [1, K]");
    if (!(lr > 0.0)) throw std::invalid_argument("config: lr must be positive");
    if (!(lr_gamma > 0.0 && lr_gamma <= 1.0)) throw std::invalid_argument("config: lr_gamma must be in (0, 1]");
    if (!(std_floor > 0.0)) throw std::invalid_argument("config: std_floor must be positive");
    if (!(beta_1 > 0.0 && beta_1 <= beta_K && beta_K < 1.0)) {
      throw std::invalid_argument("config: need 0 < beta_1 <= beta_K < 1");
    }
    SplitSpec::parse(split);
  }

  SplitSpec split_spec() const { return SplitSpec::parse(split); }

  /// Applies one key=value setting; unknown keys and malformed values throw.
  void set(const std::string& key, const std::string& value) {
    auto it = fields().find(key);
    if (it == fields().end()) throw std::invalid_argument("config: unknown key '" + key + "'");
    try {
      it->second.set(*this, value);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config: bad value '" + value + "' for '" + key + "': " + e.what());
    }
  }

  std::string get(const std::string& key) const {
    auto it = fields().find(key);
    if (it == fields().end()) throw std::invalid_argument("config: unknown key '" + key + "'");
    return it->second.get(*this);
  }

  /// Canonical key=value lines in sorted key order.
  std::string to_text() const {
    std::string out;
    for (const auto& [key, field] : fields()) out += key + "=" + field.get(*this) + "\n";
    return out;
  }

  std::map<std::string, std::string> to_map() const {
    std::map<std::string, std::string> out;
    for (const auto& [key, field] : fields()) out[key] = field.get(*this);
    return out;
  }

  static Config from_text(const std::string& text) { return from_text(text, Config()); }

  static Config from_text(const std::string& text, Config base) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
      };
      line = trim(line);
      if (line.empty() || line[0] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key=value");
      base.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return base;
  }

  static Config from_file(const std::string& path) { return from_file(path, Config()); }

  static Config from_file(const std::string& path, Config base) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return from_text(ss.str(), std::move(base));
  }

  /// 16 hex digits of FNV-1a over the canonical text.
  std::string hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : to_text()) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = digits[h & 0xF];
    return out;
  }

 private:
  struct Field {
    std::function<void(Config&, const std::string&)> set;
    std::function<std::string(const Config&)> get;
  };

  static std::string format_double(double v) {
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, end);
  }

  static double parse_double(const std::string& s) {
    double v = 0.0;
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size()) throw std::invalid_argument("not a number");
    return v;
  }

  template <class Int>
  static Int parse_int(const std::string& s) {
    Int v{};
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size()) throw std::invalid_argument("not an integer");
    return v;
  }

  static bool parse_bool(const std::string& s) {
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw std::invalid_argument("not a boolean");
  }

  template <class T>
  static Field member(T Config::*m) {
    Field f;
    if constexpr (std::is_same_v<T, std::string>) {
      f.set = [m](Config& c, const std::string& v) { c.*m = v; };
      f.get = [m](const Config& c) { return c.*m; };
    } else if constexpr (std::is_same_v<T, bool>) {
      f.set = [m](Config& c, const std::string& v) { c.*m = parse_bool(v); };
      f.get = [m](const Config& c) { return std::string(c.*m ? "true" : "false"); };
    } else if constexpr (std::is_same_v<T, double>) {
      f.set = [m](Config& c, const std::string& v) { c.*m = parse_double(v); };
      f.get = [m](const Config& c) { return format_double(c.*m); };
    } else {
      f.set = [m](Config& c, const std::string& v) { c.*m = parse_int<T>(v); };
      f.get = [m](const Config& c) { return std::to_string(c.*m); };
    }
    return f;
  }

  static const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> table = [] {
      std::map<std::string, Field> t;
      t["data"] = member(&Config::data);
      t["dataset_name"] = member(&Config::dataset_name);
      t["split"] = member(&Config::split);
      t["forward_fill"] = member(&Config::forward_fill);
      t["global_scale"] = member(&Config::global_scale);
      t["seq_len"] = member(&Config::seq_len);
      t["pred_len"] = member(&Config::pred_len);
      t["train_stride"] = member(&Config::train_stride);
      t["eval_stride"] = member(&Config::eval_stride);
      t["variant"] = {[](Config& c, const std::string& v) { c.variant = variant_from_string(v); },
                      [](const Config& c) { return to_string(c.variant); }};
      t["kernel"] = member(&Config::kernel);
      t["patch_len"] = member(&Config::patch_len);
      t["d_model"] = member(&Config::d_model);
      t["conv_width"] = member(&Config::conv_width);
      t["stat_hidden"] = member(&Config::stat_hidden);
      t["std_floor"] = member(&Config::std_floor);
      t["K"] = member(&Config::K);
      t["beta_1"] = member(&Config::beta_1);
      t["beta_K"] = member(&Config::beta_K);
      t["schedule"] = {[](Config& c, const std::string& v) { c.schedule = diffusion::schedule_kind_from_string(v); },
                       [](const Config& c) { return diffusion::to_string(c.schedule); }};
      t["ddim_steps"] = member(&Config::ddim_steps);
      t["select_ddim_steps"] = member(&Config::select_ddim_steps);
      t["lr"] = member(&Config::lr);
      t["batch_size"] = member(&Config::batch_size);
      t["patience"] = member(&Config::patience);
      t["max_epochs"] = member(&Config::max_epochs);
      t["lr_gamma"] = member(&Config::lr_gamma);
      t["full_sampling_validation"] = member(&Config::full_sampling_validation);
      t["eval_batch"] = member(&Config::eval_batch);
      t["seed"] = member(&Config::seed);
      return t;
    }();
    return table;
  }
};

}  // namespace cdpm
