#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "cdpm/core/tensor.hpp"

// Differentiable operations over cdpm::Tensor. Every op computes its forward
// value eagerly and, when tracking, records a closure that scatters the output
// gradient into its inputs.
namespace cdpm::ops {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
}

inline cdpm::detail::Node& parent(cdpm::detail::Node& self, std::size_t i) { return *self.parents[i]; }

// Unary elementwise op from value and derivative functors.
template <class F, class DF>
Tensor unary(const Tensor& x, const char* name, F f, DF df) {
  std::vector<double> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return make_op_result(x.shape(), std::move(out), {x}, name, [df](cdpm::detail::Node& self) {
    auto& px = parent(self, 0);
    if (!px.requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) px.grad[i] += self.grad[i] * df(px.data[i], self.data[i]);
  });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_op_result(a.shape(), std::move(out), {a, b}, "add", [](cdpm::detail::Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      auto& in = detail::parent(self, p);
      if (!in.requires_grad) continue;
      for (std::size_t i = 0; i < self.grad.size(); ++i) in.grad[i] += self.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_op_result(a.shape(), std::move(out), {a, b}, "sub", [](cdpm::detail::Node& self) {
    auto& pa = detail::parent(self, 0);
    auto& pb = detail::parent(self, 1);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (pa.requires_grad) pa.grad[i] += self.grad[i];
      if (pb.requires_grad) pb.grad[i] -= self.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_op_result(a.shape(), std::move(out), {a, b}, "mul", [](cdpm::detail::Node& self) {
    auto& pa = detail::parent(self, 0);
    auto& pb = detail::parent(self, 1);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (pa.requires_grad) pa.grad[i] += self.grad[i] * pb.data[i];
      if (pb.requires_grad) pb.grad[i] += self.grad[i] * pa.data[i];
    }
  });
}

inline Tensor mul_scalar(const Tensor& x, double c) {
  return detail::unary(
      x, "mul_scalar", [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Tensor add_scalar(const Tensor& x, double c) {
  return detail::unary(
      x, "add_scalar", [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

/// x * s where s is a one-element tensor (a learnable mixing weight).
inline Tensor scale(const Tensor& x, const Tensor& s) {
  if (s.numel() != 1) throw std::invalid_argument("scale: factor must have one element, got " + shape_str(s.shape()));
  const double factor = s[0];
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * x[i];
  return make_op_result(x.shape(), std::move(out), {x, s}, "scale", [](cdpm::detail::Node& self) {
    auto& px = detail::parent(self, 0);
    auto& ps = detail::parent(self, 1);
    const double factor = ps.data[0];
    double acc = 0.0;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (px.requires_grad) px.grad[i] += factor * self.grad[i];
      acc += self.grad[i] * px.data[i];
    }
    if (ps.requires_grad) ps.grad[0] += acc;
  });
}

/// Adds a vector along the last axis.
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t n = x.shape().back();
  if (bias.numel() != n) {
    throw std::invalid_argument("add_bias: bias " + shape_str(bias.shape()) + " does not match last axis of " +
                                shape_str(x.shape()));
  }
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + bias[i % n];
  return make_op_result(x.shape(), std::move(out), {x, bias}, "add_bias", [n](cdpm::detail::Node& self) {
    auto& px = detail::parent(self, 0);
    auto& pb = detail::parent(self, 1);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (px.requires_grad) px.grad[i] += self.grad[i];
      if (pb.requires_grad) pb.grad[i % n] += self.grad[i];
    }
  });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.dim() != 2 || b.dim() != 2 || a.size(1) != b.size(0)) {
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
  }
  const auto m = a.size(0), k = a.size(1), n = b.size(1);
  std::vector<double> out(m * n);
  detail::MutMap(out.data(), m, n).noalias() =
      detail::ConstMap(a.data().data(), m, k) * detail::ConstMap(b.data().data(), k, n);
  return make_op_result({m, n}, std::move(out), {a, b}, "matmul", [m, k, n](cdpm::detail::Node& self) {
    auto& pa = detail::parent(self, 0);
    auto& pb = detail::parent(self, 1);
    detail::ConstMap g(self.grad.data(), m, n);
    if (pa.requires_grad) {
      detail::MutMap(pa.grad.data(), m, k).noalias() += g * detail::ConstMap(pb.data.data(), k, n).transpose();
    }
    if (pb.requires_grad) {
      detail::MutMap(pb.grad.data(), k, n).noalias() += detail::ConstMap(pa.data.data(), m, k).transpose() * g;
    }
  });
}

/// Affine map over the last axis: x[..., in] W[in, out] + b[out].
inline Tensor linear(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias = std::nullopt) {
  if (weight.dim() != 2 || x.shape().back() != weight.size(0)) {
    throw std::invalid_argument("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                                shape_str(weight.shape()));
  }
  const auto in = weight.size(0), outd = weight.size(1);
  if (bias && bias->numel() != outd) {
    throw std::invalid_argument("linear: bias " + shape_str(bias->shape()) + " for output width " +
                                std::to_string(outd));
  }
  const auto rows = x.numel() / in;
  std::vector<double> out(rows * outd);
  detail::MutMap y(out.data(), rows, outd);
  y.noalias() = detail::ConstMap(x.data().data(), rows, in) * detail::ConstMap(weight.data().data(), in, outd);
  if (bias) y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias->data().data(), outd);
  Shape shape = x.shape();
  shape.back() = outd;
  std::vector<Tensor> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias.has_value();
  return make_op_result(std::move(shape), std::move(out), std::move(inputs), "linear",
                        [rows, in, outd, has_bias](cdpm::detail::Node& self) {
                          auto& px = detail::parent(self, 0);
                          auto& pw = detail::parent(self, 1);
                          detail::ConstMap g(self.grad.data(), rows, outd);
                          if (px.requires_grad) {
                            detail::MutMap(px.grad.data(), rows, in).noalias() +=
                                g * detail::ConstMap(pw.data.data(), in, outd).transpose();
                          }
                          if (pw.requires_grad) {
                            detail::MutMap(pw.grad.data(), in, outd).noalias() +=
                                detail::ConstMap(px.data.data(), rows, in).transpose() * g;
                          }
                          if (has_bias) {
                            auto& pb = detail::parent(self, 2);
                            if (pb.requires_grad) {
                              Eigen::Map<Eigen::RowVectorXd>(pb.grad.data(), outd) += g.colwise().sum();
                            }
                          }
                        });
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  return make_op_result(std::move(shape), x.to_vector(), {x}, "reshape", [](cdpm::detail::Node& self) {
    auto& px = detail::parent(self, 0);
    if (!px.requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) px.grad[i] += self.grad[i];
  });
}

/// Swaps the two trailing axes.
inline Tensor transpose_last2(const Tensor& x) {
  if (x.dim() < 2) throw std::invalid_argument("transpose_last2: need rank >= 2, got " + shape_str(x.shape()));
  const auto r = x.shape()[x.dim() - 2], c = x.shape().back();
  const auto batch = x.numel() / (r * c);
  std::vector<double> out(x.numel());
  const auto in = x.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[b * r * c + j * r + i] = in[b * r * c + i * c + j];
  Shape shape = x.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  return make_op_result(std::move(shape), std::move(out), {x}, "transpose", [batch, r, c](cdpm::detail::Node& self) {
    auto& px = detail::parent(self, 0);
    if (!px.requires_grad) return;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) px.grad[b * r * c + i * c + j] += self.grad[b * r * c + j * r + i];
  });
}

/// Length-preserving cross-correlation along the last axis.
///
/// x: [..., c_in, len], kernels: [c_out, c_in, w] with odd w, optional bias [c_out].
/// Positions outside the sequence read as zero.
inline Tensor conv1d(const Tensor& x, const Tensor& kernels, const std::optional<Tensor>& bias = std::nullopt) {
  if (kernels.dim() != 3) throw std::invalid_argument("conv1d: kernels must be [c_out, c_in, w], got " + shape_str(kernels.shape()));
  const auto c_out = kernels.size(0), c_in = kernels.size(1), w = kernels.size(2);
  if (w % 2 == 0) throw std::invalid_argument("conv1d: kernel width must be odd, got " + std::to_string(w));
  if (x.dim() < 2 || x.shape()[x.dim() - 2] != c_in) {
    throw std::invalid_argument("conv1d: input " + shape_str(x.shape()) + " does not have " + std::to_string(c_in) +
                                " channels");
  }
  if (bias && bias->numel() != c_out) throw std::invalid_argument("conv1d: bias must have c_out elements");
  const auto len = x.shape().back();
  const auto batch = x.numel() / (c_in * len);
  const auto pad = static_cast<long>(w / 2);
  std::vector<double> out(batch * c_out * len, 0.0);
  const auto xd = x.data();
  const auto kd = kernels.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t co = 0; co < c_out; ++co) {
      double* o = &out[(b * c_out + co) * len];
      if (bias) std::fill(o, o + len, (*bias)[co]);
      for (std::size_t ci = 0; ci < c_in; ++ci) {
        const double* xi = &xd[(b * c_in + ci) * len];
        for (std::size_t j = 0; j < w; ++j) {
          const double kv = kd[(co * c_in + ci) * w + j];
          const long shift = static_cast<long>(j) - pad;
          const long t0 = std::max(0L, -shift);
          const long t1 = std::min(static_cast<long>(len), static_cast<long>(len) - shift);
          for (long t = t0; t < t1; ++t) o[t] += kv * xi[t + shift];
        }
      }
    }
  }
  Shape shape = x.shape();
  shape[shape.size() - 2] = c_out;
  std::vector<Tensor> inputs{x, kernels};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias.has_value();
  return make_op_result(
      std::move(shape), std::move(out), std::move(inputs), "conv1d",
      [batch, c_in, c_out, w, len, pad, has_bias](cdpm::detail::Node& self) {
        auto& px = detail::parent(self, 0);
        auto& pk = detail::parent(self, 1);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t co = 0; co < c_out; ++co) {
            const double* g = &self.grad[(b * c_out + co) * len];
            for (std::size_t ci = 0; ci < c_in; ++ci) {
              const std::size_t xoff = (b * c_in + ci) * len;
              for (std::size_t j = 0; j < w; ++j) {
                const std::size_t kidx = (co * c_in + ci) * w + j;
                const long shift = static_cast<long>(j) - pad;
                const long t0 = std::max(0L, -shift);
                const long t1 = std::min(static_cast<long>(len), static_cast<long>(len) - shift);
                if (px.requires_grad) {
                  const double kv = pk.data[kidx];
                  double* gx = &px.grad[xoff];
                  for (long t = t0; t < t1; ++t) gx[t + shift] += kv * g[t];
                }
                if (pk.requires_grad) {
                  const double* xi = &px.data[xoff];
                  double acc = 0.0;
                  for (long t = t0; t < t1; ++t) acc += g[t] * xi[t + shift];
                  pk.grad[kidx] += acc;
                }
              }
            }
          }
        }
        if (has_bias) {
          auto& pb = detail::parent(self, 2);
          if (!pb.requires_grad) return;
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t co = 0; co < c_out; ++co) {
              const double* g = &self.grad[(b * c_out + co) * len];
              double acc = 0.0;
              for (std::size_t t = 0; t < len; ++t) acc += g[t];
              pb.grad[co] += acc;
            }
        }
      });
}

/// Normalises the last axis to zero mean and unit population variance.
inline Tensor layer_norm(const Tensor& x, double eps = 1e-5) {
  if (!(eps > 0.0)) throw std::invalid_argument("layer_norm: eps must be positive");
  const auto n = x.shape().back();
  const auto rows = x.numel() / n;
  std::vector<double> out(x.numel());
  std::vector<double> inv_std(rows);
  const auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* v = &xd[r * n];
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += v[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (v[i] - mean) * (v[i] - mean);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < n; ++i) out[r * n + i] = (v[i] - mean) * inv_std[r];
  }
  return make_op_result(x.shape(), std::move(out), {x}, "layer_norm",
                        [rows, n, inv_std = std::move(inv_std)](cdpm::detail::Node& self) {
                          auto& px = detail::parent(self, 0);
                          if (!px.requires_grad) return;
                          const double inv_n = 1.0 / static_cast<double>(n);
                          for (std::size_t r = 0; r < rows; ++r) {
                            const double* g = &self.grad[r * n];
                            const double* y = &self.data[r * n];
                            double mg = 0.0, mgy = 0.0;
                            for (std::size_t i = 0; i < n; ++i) {
                              mg += g[i];
                              mgy += g[i] * y[i];
                            }
                            mg *= inv_n;
                            mgy *= inv_n;
                            for (std::size_t i = 0; i < n; ++i) px.grad[r * n + i] += inv_std[r] * (g[i] - mg - y[i] * mgy);
                          }
                        });
}

/// Exact (erf-based) GELU.
inline Tensor gelu(const Tensor& x) {
  return detail::unary(
      x, "gelu", [](double v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
        const double pdf = std::exp(-0.5 * v * v) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
        return cdf + v * pdf;
      });
}

inline Tensor softplus(const Tensor& x) {
  return detail::unary(
      x, "softplus", [](double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); },
      [](double v, double) { return 1.0 / (1.0 + std::exp(-v)); });
}

inline Tensor sqrt(const Tensor& x) {
  for (double v : x.data()) {
    if (v < 0.0) throw std::domain_error("sqrt: negative input " + std::to_string(v));
  }
  return detail::unary(
      x, "sqrt", [](double v) { return std::sqrt(v); }, [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

/// sign(x) * sqrt(|x|); the subgradient at zero is taken as zero.
inline Tensor signed_sqrt(const Tensor& x) {
  return detail::unary(
      x, "signed_sqrt", [](double v) { return std::copysign(std::sqrt(std::abs(v)), v); },
      [](double, double y) { return y != 0.0 ? 0.5 / std::abs(y) : 0.0; });
}

/// out[b, t, :] = scale[b, :] * x[b, t, :] + shift[b, :]
inline Tensor modulate(const Tensor& x, const Tensor& scale_, const Tensor& shift) {
  if (x.dim() != 3) throw std::invalid_argument("modulate: x must be [B, T, D], got " + shape_str(x.shape()));
  const auto B = x.size(0), T = x.size(1), D = x.size(2);
  const Shape mod_shape{B, D};
  if (scale_.shape() != mod_shape || shift.shape() != mod_shape) {
    throw std::invalid_argument("modulate: scale/shift must be " + shape_str(mod_shape) + ", got " +
                                shape_str(scale_.shape()) + " and " + shape_str(shift.shape()));
  }
  std::vector<double> out(x.numel());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t j = 0; j < D; ++j) {
        const auto i = (b * T + t) * D + j;
        out[i] = scale_[b * D + j] * x[i] + shift[b * D + j];
      }
  return make_op_result(x.shape(), std::move(out), {x, scale_, shift}, "modulate",
                        [B, T, D](cdpm::detail::Node& self) {
                          auto& px = detail::parent(self, 0);
                          auto& ps = detail::parent(self, 1);
                          auto& ph = detail::parent(self, 2);
                          for (std::size_t b = 0; b < B; ++b)
                            for (std::size_t t = 0; t < T; ++t)
                              for (std::size_t j = 0; j < D; ++j) {
                                const auto i = (b * T + t) * D + j;
                                const double g = self.grad[i];
                                if (px.requires_grad) px.grad[i] += g * ps.data[b * D + j];
                                if (ps.requires_grad) ps.grad[b * D + j] += g * px.data[i];
                                if (ph.requires_grad) ph.grad[b * D + j] += g;
                              }
                        });
}

/// Columns [begin, begin + count) of the last axis.
inline Tensor slice_last(const Tensor& x, std::size_t begin, std::size_t count) {
  const auto n = x.shape().back();
  if (count == 0 || begin + count > n) {
    throw std::invalid_argument("slice_last: range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                                ") outside last axis of " + shape_str(x.shape()));
  }
  const auto rows = x.numel() / n;
  std::vector<double> out(rows * count);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < count; ++j) out[r * count + j] = x[r * n + begin + j];
  Shape shape = x.shape();
  shape.back() = count;
  return make_op_result(std::move(shape), std::move(out), {x}, "slice_last",
                        [rows, n, begin, count](cdpm::detail::Node& self) {
                          auto& px = detail::parent(self, 0);
                          if (!px.requires_grad) return;
                          for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t j = 0; j < count; ++j) px.grad[r * n + begin + j] += self.grad[r * count + j];
                        });
}

/// Expands per-patch values along the last axis: out[..., t] = x[..., t / patch_len], t < length.
inline Tensor repeat_patches(const Tensor& x, std::size_t patch_len, std::size_t length) {
  const auto P = x.shape().back();
  if (patch_len == 0 || P * patch_len < length) {
    throw std::invalid_argument("repeat_patches: " + std::to_string(P) + " patches of length " +
                                std::to_string(patch_len) + " cannot cover " + std::to_string(length));
  }
  const auto rows = x.numel() / P;
  std::vector<double> out(rows * length);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t t = 0; t < length; ++t) out[r * length + t] = x[r * P + t / patch_len];
  Shape shape = x.shape();
  shape.back() = length;
  return make_op_result(std::move(shape), std::move(out), {x}, "repeat_patches",
                        [rows, P, patch_len, length](cdpm::detail::Node& self) {
                          auto& px = detail::parent(self, 0);
                          if (!px.requires_grad) return;
                          for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t t = 0; t < length; ++t) px.grad[r * P + t / patch_len] += self.grad[r * length + t];
                        });
}

inline Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return make_op_result({1}, {acc}, {x}, "sum", [](cdpm::detail::Node& self) {
    auto& px = detail::parent(self, 0);
    if (!px.requires_grad) return;
    for (auto& g : px.grad) g += self.grad[0];
  });
}

inline Tensor mean(const Tensor& x) { return mul_scalar(sum(x), 1.0 / static_cast<double>(x.numel())); }

/// Mean of squared differences over all elements.
inline Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  detail::require_same_shape(pred, target, "mse_loss");
  const auto n = static_cast<double>(pred.numel());
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) acc += (pred[i] - target[i]) * (pred[i] - target[i]);
  return make_op_result({1}, {acc / n}, {pred, target}, "mse_loss", [n](cdpm::detail::Node& self) {
    auto& pp = detail::parent(self, 0);
    auto& pt = detail::parent(self, 1);
    const double g = self.grad[0] * 2.0 / n;
    for (std::size_t i = 0; i < pp.data.size(); ++i) {
      const double diff = pp.data[i] - pt.data[i];
      if (pp.requires_grad) pp.grad[i] += g * diff;
      if (pt.requires_grad) pt.grad[i] -= g * diff;
    }
  });
}

}  // namespace cdpm::ops
