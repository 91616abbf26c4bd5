#pragma once

// Time-indexed schedules for learning rates and target transition rates, and
// the transition-adaptive learning rate (TALR) controller.

#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "qat/metrics.hpp"

namespace qat {

enum class ScheduleKind { constant, cosine, step, linear };

inline ScheduleKind parse_schedule_kind(std::string_view s) {
  if (s == "constant") return ScheduleKind::constant;
  if (s == "cosine") return ScheduleKind::cosine;
  if (s == "step") return ScheduleKind::step;
  if (s == "linear") return ScheduleKind::linear;
  throw std::invalid_argument("unknown schedule kind '" + std::string(s) + "'");
}

inline const char* to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::constant: return "constant";
    case ScheduleKind::cosine: return "cosine";
    case ScheduleKind::step: return "step";
    case ScheduleKind::linear: return "linear";
  }
  return "?";
}

struct Schedule {
  ScheduleKind kind = ScheduleKind::cosine;
  double initial = 0.0;
  long total_steps = 1;
  long period = 1;        // step kind only
  double divisor = 10.0;  // step kind only

  void validate() const {
    if (!(initial >= 0.0) || !std::isfinite(initial)) throw std::invalid_argument("schedule: initial value must be >= 0");
    if (total_steps < 1) throw std::invalid_argument("schedule: total_steps must be >= 1");
    if (kind == ScheduleKind::step && (period < 1 || !(divisor > 0.0))) {
      throw std::invalid_argument("schedule: step kind needs period >= 1 and divisor > 0");
    }
  }

  double value(long t) const {
    if (t < 0 || t > total_steps) {
      throw std::out_of_range("schedule: t=" + std::to_string(t) + " outside [0," + std::to_string(total_steps) + "]");
    }
    const double frac = static_cast<double>(t) / static_cast<double>(total_steps);
    switch (kind) {
      case ScheduleKind::constant: return initial;
      case ScheduleKind::cosine:
        if (t == total_steps) return 0.0;
        return initial * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
      case ScheduleKind::linear: return initial * (1.0 - frac);
      case ScheduleKind::step: return initial / std::pow(divisor, static_cast<double>(t / period));
    }
    return initial;
  }
};

inline double schedule_value(const Schedule& s, long t) { return s.value(t); }

// Initial target TR grows with the square root of the weight bit-width.
inline double initial_target_tr(double lambda, int bits_w) {
  if (!(lambda > 0.0)) throw std::invalid_argument("initial_target_tr: lambda must be > 0");
  if (bits_w < 1) throw std::invalid_argument("initial_target_tr: bits_w must be >= 1");
  return lambda * std::sqrt(static_cast<double>(bits_w));
}

enum class TalrRule { additive, multiplicative, momentum };

inline TalrRule parse_talr_rule(std::string_view s) {
  if (s == "additive") return TalrRule::additive;
  if (s == "multiplicative") return TalrRule::multiplicative;
  if (s == "momentum") return TalrRule::momentum;
  throw std::invalid_argument("unknown TALR rule '" + std::string(s) + "'");
}

inline const char* to_string(TalrRule r) {
  switch (r) {
    case TalrRule::additive: return "additive";
    case TalrRule::multiplicative: return "multiplicative";
    case TalrRule::momentum: return "momentum";
  }
  return "?";
}

struct TrControllerState {
  double talr = 0.0;         // U
  double gain = 0.0;         // eta, additive rule
  TalrRule rule = TalrRule::additive;
  double momentum_m = 0.99;  // m', momentum rule
  std::string layer_id;
  long skipped_updates = 0;  // ratio rules with K = 0
};

// U <- max(0, U + eta (R - K))
inline TrControllerState update_talr_additive(TrControllerState s, double target, double running) {
  s.talr = std::max(0.0, s.talr + s.gain * (target - running));
  return s;
}

// U <- U R / K; skipped (and counted) when K = 0.
inline TrControllerState update_talr_multiplicative(TrControllerState s, double target, double running) {
  if (!(running > 0.0)) {
    ++s.skipped_updates;
    return s;
  }
  s.talr = s.talr * target / running;
  return s;
}

// U <- m' U + (1 - m') U R / K
inline TrControllerState update_talr_momentum(TrControllerState s, double target, double running) {
  if (!(s.momentum_m >= 0.0 && s.momentum_m < 1.0)) {
    throw std::invalid_argument("update_talr_momentum: m' must be in [0,1)");
  }
  if (!(running > 0.0)) {
    ++s.skipped_updates;
    return s;
  }
  s.talr = s.momentum_m * s.talr + (1.0 - s.momentum_m) * s.talr * target / running;
  return s;
}

inline TrControllerState update_talr(const TrControllerState& s, double target, double running) {
  switch (s.rule) {
    case TalrRule::additive: return update_talr_additive(s, target, running);
    case TalrRule::multiplicative: return update_talr_multiplicative(s, target, running);
    case TalrRule::momentum: return update_talr_momentum(s, target, running);
  }
  return s;
}

// One feedback loop per quantized layer: k -> running TR K -> TALR U.
class TrController {
 public:
  TrController() = default;
  TrController(TrControllerState state, double tr_momentum) : state_(std::move(state)), tr_momentum_(tr_momentum) {
    if (!(tr_momentum >= 0.0 && tr_momentum < 1.0)) throw std::invalid_argument("TrController: momentum must be in [0,1)");
    if (state_.talr < 0.0) throw std::invalid_argument("TrController: initial TALR must be >= 0");
  }

  // Feeds the transition rate of the update just applied; returns the TALR
  // for the next update.
  double observe(double tr, double target) {
    running_ = update_running_tr(running_, tr, tr_momentum_);
    state_ = update_talr(state_, target, running_);
    return state_.talr;
  }

  double talr() const { return state_.talr; }
  double running_tr() const { return running_; }
  double tr_momentum() const { return tr_momentum_; }
  const TrControllerState& state() const { return state_; }
  void restore(const TrControllerState& s, double running) {
    state_ = s;
    running_ = running;
  }

 private:
  TrControllerState state_;
  double tr_momentum_ = 0.99;
  double running_ = 0.0;  // K^0 = 0, no bias correction
};

}  // namespace qat
