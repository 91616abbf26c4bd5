#pragma once

// Brute-force reference checks. Nothing here calls into the quantizer,
// metrics or scheduler code it is meant to verify; only the tensor type is
// shared.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "qat/tensor.hpp"

namespace qat::oracle {

class OracleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Central differences, one coordinate at a time.
inline Tensor<double> fd_gradient(const std::function<double(const Tensor<double>&)>& fn, const Tensor<double>& x,
                                  double h = 1e-6) {
  if (!(h > 0.0)) throw OracleError("fd_gradient: step must be > 0");
  Tensor<double> probe = x.clone();
  Tensor<double> g(x.shape(), 0.0);
  auto p = probe.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double orig = p[i];
    p[i] = orig + h;
    const double fp = fn(probe);
    p[i] = orig - h;
    const double fm = fn(probe);
    p[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw OracleError("fd_gradient: non-finite evaluation at coordinate " + std::to_string(i));
    }
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// Plain description of a quantizer, kept separate from QuantizerSpec.
struct Levels {
  double alpha, beta, gamma, scale;
  bool binary = false;          // signum / threshold discretization
  bool binary_weight = true;    // threshold 0 (weights) or 0.5 (activations)
};

enum class RoundingMode { half_away_from_zero, half_to_even };

// Integer code of one latent value. Same arithmetic order as the trainer's
// quantizer: gamma * x first, then / s, both in T.
template <typename T>
std::int64_t reference_code(T x, const Levels& q, RoundingMode mode = RoundingMode::half_away_from_zero) {
  T v = static_cast<T>(q.gamma) * x / static_cast<T>(q.scale);
  if (v < static_cast<T>(q.alpha)) v = static_cast<T>(q.alpha);
  if (v > static_cast<T>(q.beta)) v = static_cast<T>(q.beta);
  if (q.binary) {
    if (q.binary_weight) return v < T{0} ? -1 : 1;
    return v < T(0.5) ? 0 : 1;
  }
  if (mode == RoundingMode::half_to_even) return static_cast<std::int64_t>(std::nearbyint(static_cast<double>(v)));
  // trunc and the fractional part are exact, so ties are decided without
  // the x + 0.5 rounding hazard.
  const T whole = std::trunc(v);
  const T frac = v - whole;
  std::int64_t c = static_cast<std::int64_t>(whole);
  if (frac >= T(0.5)) ++c;
  if (frac <= T(-0.5)) --c;
  return c;
}

template <typename T>
std::size_t recount_transitions(std::span<const T> before, std::span<const T> after, const Levels& q_before,
                                const Levels& q_after, RoundingMode mode = RoundingMode::half_away_from_zero) {
  if (before.size() != after.size()) {
    throw OracleError("recount_transitions: snapshot sizes differ (" + std::to_string(before.size()) + " vs " +
                      std::to_string(after.size()) + ")");
  }
  std::size_t n = 0;
  for (std::size_t i = 0; i < before.size(); ++i)
    if (reference_code(before[i], q_before, mode) != reference_code(after[i], q_after, mode)) ++n;
  return n;
}

template <typename T>
std::size_t recount_transitions(std::span<const T> before, std::span<const T> after, const Levels& q,
                                RoundingMode mode = RoundingMode::half_away_from_zero) {
  return recount_transitions(before, after, q, q, mode);
}

struct EssReport {
  bool holds = true;                     // every element matched and no multi-level jump
  std::vector<std::size_t> violations;   // |dw_q| != levels_moved * delta
  std::vector<std::size_t> multi_level;  // code moved by more than one level
  double max_abs_error = 0.0;
  double avg_ess = 0.0;                  // mean |dw_q|
  double transition_fraction = 0.0;      // fraction of codes that changed
};

// Per element: |w_q_after - w_q_before| == delta * |code change| (in units of
// code_step, 2 for signum weights), within tol.
inline EssReport verify_ess_identity(std::span<const double> wq_before, std::span<const double> wq_after,
                                     std::span<const std::int64_t> codes_before,
                                     std::span<const std::int64_t> codes_after, double delta, std::int64_t code_step = 1,
                                     double tol = 1e-12) {
  const std::size_t n = wq_before.size();
  if (wq_after.size() != n || codes_before.size() != n || codes_after.size() != n) {
    throw OracleError("verify_ess_identity: inputs must have equal length");
  }
  if (code_step < 1) throw OracleError("verify_ess_identity: code_step must be >= 1");
  EssReport r;
  std::size_t changed = 0;
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::int64_t moved = std::abs(codes_after[i] - codes_before[i]) / code_step;
    const double dq = std::abs(wq_after[i] - wq_before[i]);
    acc += dq;
    if (moved != 0) ++changed;
    if (moved > 1) r.multi_level.push_back(i);
    const double err = std::abs(dq - delta * static_cast<double>(moved));
    r.max_abs_error = std::max(r.max_abs_error, err);
    if (err > tol) r.violations.push_back(i);
  }
  if (n) {
    r.avg_ess = acc / static_cast<double>(n);
    r.transition_fraction = static_cast<double>(changed) / static_cast<double>(n);
  }
  r.holds = r.violations.empty() && r.multi_level.empty();
  return r;
}

enum class ControllerRule { additive, multiplicative, momentum };

struct ControllerSim {
  ControllerRule rule = ControllerRule::additive;
  double u0 = 0.1;
  double gain = 0.1;        // additive
  double rule_m = 0.99;     // momentum rule
  double ema_m = 0.0;       // 0: plant output is used as K directly
  long steps = 1000;
};

struct Trajectory {
  std::vector<double> U, K, R;
  long skipped = 0;
};

// Closed loop: k = plant(U); K = ema(K, k); U <- rule(U, R(t), K).
inline Trajectory simulate_controller(const std::function<double(double)>& plant,
                                      const std::function<double(long)>& target, const ControllerSim& sim) {
  Trajectory tr;
  double U = sim.u0, K = 0.0;
  for (long t = 1; t <= sim.steps; ++t) {
    const double k = plant(U);
    K = sim.ema_m * K + (1.0 - sim.ema_m) * k;
    const double R = target(t);
    switch (sim.rule) {
      case ControllerRule::additive: {
        const double next = U + sim.gain * (R - K);
        U = next > 0.0 ? next : 0.0;
        break;
      }
      case ControllerRule::multiplicative:
        if (K > 0.0) U = U * R / K;
        else ++tr.skipped;
        break;
      case ControllerRule::momentum:
        if (K > 0.0) U = sim.rule_m * U + (1.0 - sim.rule_m) * U * R / K;
        else ++tr.skipped;
        break;
    }
    tr.U.push_back(U);
    tr.K.push_back(K);
    tr.R.push_back(R);
  }
  return tr;
}

// First index from which |K - R| < tol holds until the end; -1 if never.
inline long settled_from(const Trajectory& tr, double tol) {
  long from = -1;
  for (std::size_t i = 0; i < tr.K.size(); ++i) {
    if (std::abs(tr.K[i] - tr.R[i]) < tol) {
      if (from < 0) from = static_cast<long>(i);
    } else {
      from = -1;
    }
  }
  return from;
}

}  // namespace qat::oracle
