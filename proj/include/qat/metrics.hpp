#pragma once

// Per-layer transition statistics: transition rate, its running average,
// effective step sizes and distance of normalized latents to transition points.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "qat/quantizer.hpp"
#include "qat/tensor.hpp"

namespace qat {

struct LayerTransitionStats {
  std::size_t n_weights = 0;
  double tr = 0.0;
  double running_tr = 0.0;
  double avg_ess_quantized = 0.0;
  double avg_ess_latent = 0.0;
  double mean_dist_to_tp = 0.0;
};

// Fraction of codes that changed.
inline double compute_tr(std::span<const std::int32_t> prev_codes, std::span<const std::int32_t> codes) {
  if (prev_codes.empty() && codes.empty()) throw std::invalid_argument("compute_tr: layer has no weights");
  const auto changed = count_codes_changed(prev_codes, codes);
  return static_cast<double>(changed) / static_cast<double>(codes.size());
}

inline double update_running_tr(double running_prev, double tr, double momentum) {
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("update_running_tr: momentum must be in [0,1), got " + std::to_string(momentum));
  }
  return momentum * running_prev + (1.0 - momentum) * tr;
}

template <typename T>
double avg_effective_step_size(std::span<const T> prev_vals, std::span<const T> vals) {
  if (prev_vals.size() != vals.size()) {
    throw ShapeError("avg_effective_step_size: size mismatch " + std::to_string(prev_vals.size()) + " vs " +
                     std::to_string(vals.size()));
  }
  if (vals.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < vals.size(); ++i)
    acc += std::abs(static_cast<double>(vals[i]) - static_cast<double>(prev_vals[i]));
  return acc / static_cast<double>(vals.size());
}

template <typename T>
double avg_effective_step_size(const Tensor<T>& prev_vals, const Tensor<T>& vals) {
  if (prev_vals.shape() != vals.shape()) {
    throw ShapeError("avg_effective_step_size: shape mismatch " + shape_str(prev_vals.shape()) + " vs " +
                     shape_str(vals.shape()));
  }
  return avg_effective_step_size<T>(prev_vals.data(), vals.data());
}

// Distance from a normalized value to the nearest point where the
// discretization changes its output. Round: half-integers strictly inside
// (alpha, beta). Signum: 0 for weights, 0.5 for binary activations.
inline double distance_to_transition_point(double w_n, const QuantizerSpec& spec) {
  if (spec.discretization == Discretization::signum) {
    return std::abs(w_n - (spec.role == QuantRole::weight ? 0.0 : 0.5));
  }
  const double lo = spec.alpha + 0.5;
  const double hi = spec.beta - 0.5;
  const double nearest = std::clamp(std::floor(w_n) + 0.5, lo, hi);
  double d = std::abs(w_n - nearest);
  // floor(w)+0.5 may sit on the far side; check the neighbour below as well.
  const double below = std::clamp(nearest - 1.0, lo, hi);
  d = std::min(d, std::abs(w_n - below));
  return d;
}

template <typename T>
double mean_distance_to_transition_points(std::span<const T> w_n, const QuantizerSpec& spec) {
  if (w_n.empty()) return 0.0;
  double acc = 0.0;
  for (T v : w_n) acc += distance_to_transition_point(static_cast<double>(v), spec);
  return acc / static_cast<double>(w_n.size());
}

template <typename T>
std::vector<T> normalized(std::span<const T> x, const QuantizerSpec& spec) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = normalize_value(x[i], spec);
  return out;
}

// Keeps the previous code set of one quantized layer and reports the
// transition rate each time the latent weights are observed again.
class TransitionTracker {
 public:
  TransitionTracker() = default;

  template <typename T>
  void reset(std::span<const T> latent, const QuantizerSpec& spec) {
    codes_ = quantize_forward<T>(latent, spec).codes;
    if (codes_.empty()) throw std::invalid_argument("TransitionTracker: layer has no weights");
  }

  bool initialized() const { return !codes_.empty(); }

  // Re-quantizes `latent`, returns the fraction of codes that changed since
  // the previous observation, and keeps the new codes.
  template <typename T>
  double observe(std::span<const T> latent, const QuantizerSpec& spec) {
    auto fresh = quantize_forward<T>(latent, spec).codes;
    const double k = compute_tr(codes_, fresh);
    last_changed_ = count_codes_changed(codes_, fresh);
    codes_ = std::move(fresh);
    return k;
  }

  std::size_t last_changed() const { return last_changed_; }
  std::span<const std::int32_t> codes() const { return codes_; }

 private:
  std::vector<std::int32_t> codes_;
  std::size_t last_changed_ = 0;
};

}  // namespace qat
