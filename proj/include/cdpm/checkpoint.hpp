#pragma once

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdpm/config.hpp"
#include "cdpm/core/io.hpp"
#include "cdpm/core/version.hpp"
#include "cdpm/model.hpp"
#include "cdpm/optim.hpp"

// On-disk layout:
//
//   CDPM-CKPT v1
//   key=value            (config.*, meta.* and one array.* line per array)
//   ...
//   <blank line>
//   little-endian float64 arrays, concatenated in manifest order
//
// Array lines read `array.<name>=<d0>x<d1>... <byte offset> <byte count>`.
namespace cdpm::checkpoint {

inline constexpr const char* kMagic = "CDPM-CKPT v1";

struct Array {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  Config config;
  std::map<std::string, std::string> meta;
  std::vector<Array> arrays;

  const Array* find(const std::string& name) const {
    for (const auto& a : arrays) {
      if (a.name == name) return &a;
    }
    return nullptr;
  }
};

namespace detail {

inline std::string shape_text(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

inline Shape parse_shape(const std::string& text) {
  Shape s;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, 'x')) s.push_back(std::stoul(part));
  return s;
}

inline void append_le(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>(bits & 0xFF));
    bits >>= 8;
  }
}

inline double read_le(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = (bits << 8) | static_cast<unsigned char>(p[i]);
  return std::bit_cast<double>(bits);
}

}  // namespace detail

/// Shortest text that parses back to the same double.
inline std::string exact(double v) {
  char buf[40];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

inline double parse_exact(const std::string& s) {
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) throw std::runtime_error("checkpoint: bad number '" + s + "'");
  return v;
}

inline std::string serialize(const Checkpoint& ck) {
  std::string head = std::string(kMagic) + "\n";
  for (const auto& [k, v] : ck.config.to_map()) head += "config." + k + "=" + v + "\n";
  for (const auto& [k, v] : ck.meta) head += "meta." + k + "=" + v + "\n";
  std::size_t offset = 0;
  for (const auto& a : ck.arrays) {
    if (shape_numel(a.shape) != a.values.size()) throw std::invalid_argument("checkpoint: array '" + a.name + "' shape mismatch");
    const auto bytes = a.values.size() * 8;
    head += "array." + a.name + "=" + detail::shape_text(a.shape) + " " + std::to_string(offset) + " " +
            std::to_string(bytes) + "\n";
    offset += bytes;
  }
  head += "\n";
  head.reserve(head.size() + offset);
  for (const auto& a : ck.arrays)
    for (double v : a.values) detail::append_le(head, v);
  return head;
}

inline Checkpoint deserialize(const std::string& bytes) {
  std::size_t pos = 0;
  auto next_line = [&]() {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string::npos) throw std::runtime_error("checkpoint: truncated header");
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  if (next_line() != kMagic) throw std::runtime_error("checkpoint: bad magic line (expected '" + std::string(kMagic) + "')");
  Checkpoint ck;
  struct Entry {
    std::string name;
    Shape shape;
    std::size_t offset, count;
  };
  std::vector<Entry> manifest;
  for (std::string line = next_line(); !line.empty(); line = next_line()) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("checkpoint: malformed header line '" + line + "'");
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key.rfind("config.", 0) == 0) {
      ck.config.set(key.substr(7), value);
    } else if (key.rfind("meta.", 0) == 0) {
      ck.meta[key.substr(5)] = value;
    } else if (key.rfind("array.", 0) == 0) {
      std::istringstream ss(value);
      std::string shape;
      Entry e{key.substr(6), {}, 0, 0};
      if (!(ss >> shape >> e.offset >> e.count)) throw std::runtime_error("checkpoint: malformed array line '" + line + "'");
      e.shape = detail::parse_shape(shape);
      if (shape_numel(e.shape) * 8 != e.count) throw std::runtime_error("checkpoint: size mismatch for '" + e.name + "'");
      manifest.push_back(std::move(e));
    } else {
      throw std::runtime_error("checkpoint: unknown header key '" + key + "'");
    }
  }
  const std::size_t data_begin = pos;
  for (const auto& e : manifest) {
    if (data_begin + e.offset + e.count > bytes.size()) throw std::runtime_error("checkpoint: array '" + e.name + "' truncated");
    Array a{e.name, e.shape, std::vector<double>(e.count / 8)};
    for (std::size_t i = 0; i < a.values.size(); ++i) a.values[i] = detail::read_le(bytes.data() + data_begin + e.offset + 8 * i);
    ck.arrays.push_back(std::move(a));
  }
  return ck;
}

inline void save(const std::string& path, const Checkpoint& ck) { io::write_file_atomic(path, serialize(ck)); }
inline Checkpoint load(const std::string& path) { return deserialize(io::read_file(path)); }

/// Parameters as `param.<name>`, plus Adam moments as `adam_m.<name>` / `adam_v.<name>` when given.
inline Checkpoint from_model(const model::Model& m, const optim::Adam* opt = nullptr) {
  Checkpoint ck;
  ck.config = m.config();
  ck.meta["channels"] = std::to_string(m.channels());
  ck.meta["version"] = kVersion;
  const auto params = m.named_parameters();
  for (const auto& [name, t] : params) ck.arrays.push_back({"param." + name, t.shape(), t.to_vector()});
  if (opt) {
    ck.meta["adam_step"] = std::to_string(opt->step_count());
    ck.meta["adam_lr"] = exact(opt->lr());
    for (std::size_t i = 0; i < params.size(); ++i) {
      ck.arrays.push_back({"adam_m." + params[i].first, params[i].second.shape(), opt->first_moments()[i]});
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      ck.arrays.push_back({"adam_v." + params[i].first, params[i].second.shape(), opt->second_moments()[i]});
    }
  }
  return ck;
}

/// Rebuilds the model; every parameter must be present with a matching shape.
inline model::Model to_model(const Checkpoint& ck) {
  auto it = ck.meta.find("channels");
  if (it == ck.meta.end()) throw std::runtime_error("checkpoint: missing meta.channels");
  model::Model m(ck.config, std::stoul(it->second));
  for (auto& [name, t] : m.named_parameters()) {
    const auto* a = ck.find("param." + name);
    if (!a) throw std::runtime_error("checkpoint: missing parameter '" + name + "'");
    if (a->shape != t.shape()) {
      throw std::runtime_error("checkpoint: parameter '" + name + "' has shape " + shape_str(a->shape) + ", model expects " +
                               shape_str(t.shape()));
    }
    auto w = t.mutable_data();
    std::copy(a->values.begin(), a->values.end(), w.begin());
  }
  return m;
}

inline void restore_optimizer(const Checkpoint& ck, optim::Adam& opt) {
  auto it = ck.meta.find("adam_step");
  if (it == ck.meta.end()) throw std::runtime_error("checkpoint: no optimizer state");
  std::vector<std::vector<double>> m, v;
  for (const auto& [name, t] : opt.params()) {
    const auto* am = ck.find("adam_m." + name);
    const auto* av = ck.find("adam_v." + name);
    if (!am || !av) throw std::runtime_error("checkpoint: missing optimizer moments for '" + name + "'");
    m.push_back(am->values);
    v.push_back(av->values);
  }
  opt.load_state(std::stol(it->second), std::move(m), std::move(v));
  opt.set_lr(parse_exact(ck.meta.at("adam_lr")));
}

}  // namespace cdpm::checkpoint
