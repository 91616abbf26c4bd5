#pragma once

// Uniform quantizer with fixed output range:
//
//   x_n = clip(gamma * x / s, alpha, beta)      normalize
//   x_d = round(x_n)  or  signum(x_n)           discretize (integer code)
//   x_q = x_d / gamma                           fixed de-normalization
//
// The backward pass is straight-through on the discretization, so only the
// clip mask and the 1/s factor survive.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "qat/ops.hpp"
#include "qat/tape.hpp"
#include "qat/tensor.hpp"

namespace qat {

class QuantizerError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class QuantRole : std::uint8_t { weight = 0, activation = 1 };
enum class Discretization : std::uint8_t { round = 0, signum = 1 };

inline const char* to_string(QuantRole r) { return r == QuantRole::weight ? "weight" : "activation"; }
inline const char* to_string(Discretization d) { return d == Discretization::round ? "round" : "signum"; }

struct QuantizerSpec {
  int bits = 2;
  QuantRole role = QuantRole::weight;
  double alpha = -2;
  double beta = 1;
  double gamma = 2;
  double scale = 1;
  bool scale_trainable = false;
  Discretization discretization = Discretization::round;

  // Bit-specific constants: weights (-2^(b-1), 2^(b-1)-1, 2^(b-1)),
  // activations (0, 2^b-1, 2^b); one bit switches to signum with
  // (-1, 1, 1) for weights and (0, 1, 1) for activations.
  static QuantizerSpec make(int bits, QuantRole role, double scale = 1.0, bool scale_trainable = false) {
    if (bits < 1 || bits > 16) throw QuantizerError("quantizer: bit-width must be in [1,16], got " + std::to_string(bits));
    QuantizerSpec s;
    s.bits = bits;
    s.role = role;
    s.scale = scale;
    s.scale_trainable = scale_trainable;
    if (bits == 1) {
      s.discretization = Discretization::signum;
      s.alpha = role == QuantRole::weight ? -1.0 : 0.0;
      s.beta = 1.0;
      s.gamma = 1.0;
    } else if (role == QuantRole::weight) {
      const double half = std::ldexp(1.0, bits - 1);
      s.alpha = -half;
      s.beta = half - 1.0;
      s.gamma = half;
    } else {
      const double levels = std::ldexp(1.0, bits);
      s.alpha = 0.0;
      s.beta = levels - 1.0;
      s.gamma = levels;
    }
    s.validate();
    return s;
  }

  void validate() const {
    if (!(scale > 0.0) || !std::isfinite(scale)) {
      throw QuantizerError("quantizer: scale must be positive and finite, got " + std::to_string(scale));
    }
    if (!(alpha < beta) || !(gamma > 0.0)) throw QuantizerError("quantizer: invalid constants");
  }

  // Distance between adjacent output levels.
  double level_spacing() const {
    if (discretization == Discretization::signum && role == QuantRole::weight) return 2.0 / gamma;
    return 1.0 / gamma;
  }

  // Latent-space clip interval [s*alpha/gamma, s*beta/gamma].
  double clip_low() const { return scale * alpha / gamma; }
  double clip_high() const { return scale * beta / gamma; }
};

template <typename T>
T normalize_value(T x, const QuantizerSpec& spec) {
  const T xn = static_cast<T>(spec.gamma) * x / static_cast<T>(spec.scale);
  return std::clamp(xn, static_cast<T>(spec.alpha), static_cast<T>(spec.beta));
}

// Round-half-away-from-zero for multi-bit; signum(0) = +1 for weights and
// [x_n >= 0.5] for binary activations.
template <typename T>
std::int32_t discretize_value(T x_n, const QuantizerSpec& spec) {
  if (spec.discretization == Discretization::round) return static_cast<std::int32_t>(std::round(x_n));
  if (spec.role == QuantRole::weight) return x_n >= T{0} ? 1 : -1;
  return x_n >= T(0.5) ? 1 : 0;
}

template <typename T>
struct QuantizeResult {
  std::vector<T> values;
  std::vector<std::int32_t> codes;
};

template <typename T>
QuantizeResult<T> quantize_forward(std::span<const T> x, const QuantizerSpec& spec) {
  spec.validate();
  QuantizeResult<T> r;
  r.values.resize(x.size());
  r.codes.resize(x.size());
  const T inv_gamma = T{1} / static_cast<T>(spec.gamma);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (std::isnan(x[i])) throw QuantizerError("quantizer: NaN input at index " + std::to_string(i));
    const std::int32_t code = discretize_value(normalize_value(x[i], spec), spec);
    r.codes[i] = code;
    r.values[i] = static_cast<T>(code) * inv_gamma;
  }
  return r;
}

template <typename T>
QuantizeResult<T> quantize_forward(const Tensor<T>& x, const QuantizerSpec& spec) {
  return quantize_forward<T>(x.data(), spec);
}

template <typename T>
struct QuantizeGrad {
  std::vector<T> grad_x;
  std::optional<T> grad_s;
};

// True when the normalized input lies strictly inside (alpha, beta).
template <typename T>
bool inside_clip(T x, const QuantizerSpec& spec) {
  const T xn = static_cast<T>(spec.gamma) * x / static_cast<T>(spec.scale);
  return xn > static_cast<T>(spec.alpha) && xn < static_cast<T>(spec.beta);
}

template <typename T>
QuantizeGrad<T> quantize_backward(std::span<const T> x, const QuantizerSpec& spec, std::span<const T> upstream) {
  spec.validate();
  if (x.size() != upstream.size()) {
    throw ShapeError("quantize_backward: " + std::to_string(x.size()) + " inputs vs " +
                     std::to_string(upstream.size()) + " upstream gradients");
  }
  QuantizeGrad<T> g;
  g.grad_x.assign(x.size(), T{0});
  const T s = static_cast<T>(spec.scale);
  const T inv_s = T{1} / s;
  T gs{0};
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (std::isnan(x[i])) throw QuantizerError("quantizer: NaN input at index " + std::to_string(i));
    if (!inside_clip(x[i], spec)) continue;
    g.grad_x[i] = upstream[i] * inv_s;
    gs += upstream[i] * (-x[i] / (s * s));
  }
  if (spec.scale_trainable) g.grad_s = gs;
  return g;
}

inline std::size_t count_codes_changed(std::span<const std::int32_t> prev, std::span<const std::int32_t> codes) {
  if (prev.size() != codes.size()) {
    throw ShapeError("count_codes_changed: length mismatch " + std::to_string(prev.size()) + " vs " +
                     std::to_string(codes.size()));
  }
  std::size_t n = 0;
  for (std::size_t i = 0; i < prev.size(); ++i) n += prev[i] != codes[i] ? 1 : 0;
  return n;
}

// Scale whose clip interval reaches about 3 sigma of a zero-mean Gaussian
// fitted through the mean absolute value (E|w| = sigma * sqrt(2/pi)).
template <typename T>
double init_scale(std::span<const T> latent, const QuantizerSpec& /*spec*/) {
  if (latent.empty()) throw QuantizerError("init_scale: empty input");
  double acc = 0.0;
  for (T v : latent) acc += std::abs(static_cast<double>(v));
  const double mean_abs = acc / static_cast<double>(latent.size());
  if (!(mean_abs > 0.0) || !std::isfinite(mean_abs)) return 1.0;
  return 3.0 * mean_abs / std::sqrt(2.0 / std::numbers::pi);
}

// Records the quantizer on the tape. The scale is read from `scale` (shape
// [1]); its gradient is accumulated when `scale` requires grad.
template <typename T>
Tensor<T> quantize(Tape<T>& tape, const Tensor<T>& x, QuantizerSpec spec, const Tensor<T>& scale,
                   std::vector<std::int32_t>* codes_out = nullptr) {
  spec.scale = static_cast<double>(scale.item());
  auto fwd = quantize_forward<T>(x.data(), spec);
  if (codes_out) *codes_out = std::move(fwd.codes);
  Tensor<T> out(x.shape(), std::move(fwd.values));
  if (tape.should_record({&x, &scale})) {
    out.set_requires_grad(true);
    spec.scale_trainable = scale.requires_grad();
    tape.record("quantize", out, [x, scale, out, spec]() mutable {
      auto up = out.grad();
      auto g = quantize_backward<T>(x.data(), spec, std::span<const T>(up.data(), up.size()));
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g.grad_x[i];
      }
      if (g.grad_s) scale.grad()[0] += *g.grad_s;
    });
  }
  return out;
}

}  // namespace qat
