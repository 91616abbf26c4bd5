#pragma once

// Gradient terms (SGD with momentum, Adam, AdamW) and the two update modes:
// a scheduled learning rate, or a per-layer TALR supplied by a controller.

#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "qat/tensor.hpp"

namespace qat {

enum class OptimizerKind { sgd, adam, adamw };

inline OptimizerKind parse_optimizer_kind(std::string_view s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  if (s == "adamw") return OptimizerKind::adamw;
  throw std::invalid_argument("unknown optimizer '" + std::string(s) + "'");
}

inline const char* to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::adam: return "adam";
    case OptimizerKind::adamw: return "adamw";
  }
  return "?";
}

struct OptimizerHyper {
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct MomentState {
  std::vector<T> first;
  std::vector<T> second;
  long step = 0;
};

// buffer <- momentum * buffer + grad; g = buffer
template <typename T>
void gradient_term_sgd(std::span<const T> grad, MomentState<T>& st, const OptimizerHyper& h, std::vector<T>& g) {
  if (st.first.size() != grad.size()) st.first.assign(grad.size(), T{0});
  const T mom = static_cast<T>(h.momentum);
  g.resize(grad.size());
  for (std::size_t i = 0; i < grad.size(); ++i) {
    st.first[i] = mom * st.first[i] + grad[i];
    g[i] = st.first[i];
  }
  ++st.step;
}

// Bias-corrected m_hat / (sqrt(v_hat) + eps).
template <typename T>
void gradient_term_adam(std::span<const T> grad, MomentState<T>& st, const OptimizerHyper& h, std::vector<T>& g) {
  if (st.first.size() != grad.size()) {
    st.first.assign(grad.size(), T{0});
    st.second.assign(grad.size(), T{0});
  }
  ++st.step;
  const T b1 = static_cast<T>(h.beta1), b2 = static_cast<T>(h.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(h.beta1, static_cast<double>(st.step)));
  const T c2 = static_cast<T>(1.0 - std::pow(h.beta2, static_cast<double>(st.step)));
  const T eps = static_cast<T>(h.eps);
  g.resize(grad.size());
  for (std::size_t i = 0; i < grad.size(); ++i) {
    st.first[i] = b1 * st.first[i] + (T{1} - b1) * grad[i];
    st.second[i] = b2 * st.second[i] + (T{1} - b2) * grad[i] * grad[i];
    const T mhat = st.first[i] / c1;
    const T vhat = st.second[i] / c2;
    g[i] = mhat / (std::sqrt(vhat) + eps);
  }
}

template <typename T>
std::vector<T> gradient_term(OptimizerKind kind, std::span<const T> grad, MomentState<T>& st, const OptimizerHyper& h) {
  std::vector<T> g;
  if (kind == OptimizerKind::sgd) gradient_term_sgd(grad, st, h, g);
  else gradient_term_adam(grad, st, h, g);
  return g;
}

namespace detail {
template <typename T>
void descend(std::span<T> w, std::span<const T> g, double step, double weight_decay, bool decoupled) {
  if (w.size() != g.size()) throw ShapeError("update: parameter and gradient term sizes differ");
  const T mu = static_cast<T>(step);
  const T wd = static_cast<T>(weight_decay);
  if (decoupled) {
    for (std::size_t i = 0; i < w.size(); ++i) {
      const T wi = w[i];
      w[i] = wi - mu * g[i] - mu * wd * wi;
    }
  } else {
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= mu * (g[i] + wd * w[i]);
  }
}
}  // namespace detail

// w <- w - mu (g + wd w); decoupled: w <- w - mu g - mu wd w
template <typename T>
void apply_plain(std::span<T> w, std::span<const T> g, double mu, double weight_decay = 0.0, bool decoupled = false) {
  detail::descend(w, g, mu, weight_decay, decoupled);
}

// w <- w - U g, with weight decay scaled by the TALR as well.
template <typename T>
void apply_talr(std::span<T> w, std::span<const T> g, double talr, double weight_decay = 0.0, bool decoupled = false) {
  if (talr < 0.0) throw std::invalid_argument("apply_talr: TALR must be >= 0");
  detail::descend(w, g, talr, weight_decay, decoupled);
}

enum class UpdateMode { plain_lr, talr };

inline const char* to_string(UpdateMode m) { return m == UpdateMode::plain_lr ? "plain_lr" : "talr"; }

template <typename T>
struct ParamGroup {
  std::string name;
  std::vector<Tensor<T>> params;
  UpdateMode mode = UpdateMode::plain_lr;
  double lr_scale = 1.0;      // multiplier on the scheduled LR (plain_lr only)
  double weight_decay = 0.0;
  double talr = 0.0;          // step size for talr groups, set before each step
};

template <typename T>
class Optimizer {
 public:
  struct UpdateRecord {
    const void* param;
    std::string group;
    UpdateMode mode;
    double step_size;
  };

  explicit Optimizer(OptimizerKind kind, OptimizerHyper hyper = {}) : kind_(kind), hyper_(hyper) {}

  std::size_t add_group(ParamGroup<T> group) {
    states_.emplace_back(group.params.size());
    groups_.push_back(std::move(group));
    return groups_.size() - 1;
  }

  std::vector<ParamGroup<T>>& groups() { return groups_; }
  const std::vector<ParamGroup<T>>& groups() const { return groups_; }
  OptimizerKind kind() const { return kind_; }

  void set_talr(std::size_t group, double talr) { groups_.at(group).talr = talr; }

  // One update of every parameter; `lr` is the scheduled LR for this step.
  // Parameters without a gradient buffer are treated as having zero gradient.
  void step(double lr) {
    last_updates_.clear();
    const bool decoupled = kind_ == OptimizerKind::adamw;
    for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
      auto& group = groups_[gi];
      const double step_size = group.mode == UpdateMode::talr ? group.talr : lr * group.lr_scale;
      for (std::size_t pi = 0; pi < group.params.size(); ++pi) {
        auto& p = group.params[pi];
        if (p.has_grad()) {
          auto gr = p.grad();
          gradient_into(std::span<const T>(gr.data(), gr.size()), states_[gi][pi]);
        } else {
          zeros_.assign(p.numel(), T{0});
          gradient_into(std::span<const T>(zeros_), states_[gi][pi]);
        }
        if (group.mode == UpdateMode::talr) {
          apply_talr<T>(p.data(), scratch_, step_size, group.weight_decay, decoupled);
        } else {
          apply_plain<T>(p.data(), scratch_, step_size, group.weight_decay, decoupled);
        }
        last_updates_.push_back(UpdateRecord{p.id(), group.name, group.mode, step_size});
      }
    }
  }

  void zero_grad() {
    for (auto& g : groups_)
      for (auto& p : g.params) p.zero_grad();
  }

  const std::vector<UpdateRecord>& last_updates() const { return last_updates_; }
  const MomentState<T>& state(std::size_t group, std::size_t param) const { return states_.at(group).at(param); }

 private:
  void gradient_into(std::span<const T> grad, MomentState<T>& st) {
    if (kind_ == OptimizerKind::sgd) gradient_term_sgd(grad, st, hyper_, scratch_);
    else gradient_term_adam(grad, st, hyper_, scratch_);
  }

  OptimizerKind kind_;
  OptimizerHyper hyper_;
  std::vector<ParamGroup<T>> groups_;
  std::vector<std::vector<MomentState<T>>> states_;
  std::vector<UpdateRecord> last_updates_;
  std::vector<T> scratch_;
  std::vector<T> zeros_;
};

}  // namespace qat
