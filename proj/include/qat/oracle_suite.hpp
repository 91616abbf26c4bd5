#pragma once

// The oracle suite: each check compares library behaviour against an oracle
// from oracle.hpp (or a closed form) and reports pass/fail with detail.
// Groups: fd, ste, transitions, ess, controller, scale_interval.

#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "qat/metrics.hpp"
#include "qat/ops.hpp"
#include "qat/oracle.hpp"
#include "qat/quantizer.hpp"
#include "qat/scheduler.hpp"

namespace qat::oracle {

struct CheckResult {
  std::string group;
  std::string name;
  bool passed = false;
  std::string detail;
};

struct SuiteOptions {
  std::string filter;        // run only groups whose name contains this
  std::string inject_fault;  // "rounding": oracle recount rounds half to even
  std::uint64_t seed = 12345;
};

inline std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

inline Levels levels_of(const QuantizerSpec& s) {
  Levels l{s.alpha, s.beta, s.gamma, s.scale};
  l.binary = s.discretization == Discretization::signum;
  l.binary_weight = s.role == QuantRole::weight;
  return l;
}

// max |a - b| <= rel * max(max|b|, floor)
inline bool close_rel(std::span<const double> a, std::span<const double> b, double rel, double* err_out = nullptr,
                      double floor = 1e-8) {
  double err = 0.0, ref = floor;
  for (std::size_t i = 0; i < a.size(); ++i) {
    err = std::max(err, std::abs(a[i] - b[i]));
    ref = std::max(ref, std::abs(b[i]));
  }
  if (err_out) *err_out = err / ref;
  return err <= rel * ref;
}

using OpBuilder = std::function<Tensor<double>(Tape<double>&, const std::vector<Tensor<double>>&)>;

// Autodiff gradient of sum(c * f(inputs)) against central differences for
// every input, in double precision.
inline CheckResult fd_check_op(const std::string& name, std::vector<Tensor<double>> inputs, const OpBuilder& f,
                               std::uint64_t seed, double rel = 1e-3) {
  CheckResult r{"fd", name, true, ""};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  Tensor<double> coeff;
  {
    Tape<double> probe(false);
    auto out = f(probe, inputs);
    coeff = Tensor<double>(out.shape(), 0.0);
    for (auto& v : coeff.data()) v = nd(rng);
  }
  auto weighted = [&](const std::vector<Tensor<double>>& in) {
    Tape<double> tape(false);
    auto out = f(tape, in);
    double acc = 0.0;
    for (std::size_t i = 0; i < out.numel(); ++i) acc += out[i] * coeff[i];
    return acc;
  };
  for (auto& t : inputs) t.set_requires_grad(true);
  Tape<double> tape;
  auto out = f(tape, inputs);
  auto loss = sum(tape, mul(tape, out, coeff));
  tape.backward(loss);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto fn = [&](const Tensor<double>& probe) {
      std::vector<Tensor<double>> in;
      for (std::size_t j = 0; j < inputs.size(); ++j) in.push_back(j == k ? probe : inputs[j].clone());
      return weighted(in);
    };
    const auto fd = fd_gradient(fn, inputs[k].clone(), 1e-6);
    const auto g = inputs[k].grad();
    double err = 0;
    const bool ok = close_rel(std::span<const double>(g.data(), g.size()), fd.data(), rel, &err);
    if (!ok) {
      r.passed = false;
      r.detail += "input " + std::to_string(k) + " rel err " + sci(err) + "; ";
    }
  }
  if (r.passed) r.detail = "autodiff matches central differences";
  return r;
}

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double sd = 1.0, double offset = 0.0) {
  Tensor<double> t(std::move(shape), 0.0);
  std::normal_distribution<double> nd(offset, sd);
  for (auto& v : t.data()) v = nd(rng);
  return t;
}

// Keeps values away from the kinks of relu.
inline Tensor<double> away_from_zero(Tensor<double> t, double margin = 1e-2) {
  for (auto& v : t.data())
    if (std::abs(v) < margin) v = v < 0 ? -margin : margin;
  return t;
}

inline std::vector<CheckResult> fd_checks(std::uint64_t seed) {
  std::vector<CheckResult> out;
  std::mt19937_64 rng(seed);
  {
    CheckResult r{"fd", "half_squared_norm", false, ""};
    auto x = random_tensor(Shape{7}, rng);
    auto g = fd_gradient([](const Tensor<double>& t) {
      double a = 0;
      for (double v : t.data()) a += 0.5 * v * v;
      return a;
    }, x);
    double err = 0;
    for (std::size_t i = 0; i < 7; ++i) err = std::max(err, std::abs(g[i] - x[i]));
    r.passed = err < 1e-6;
    r.detail = "max |fd - x| = " + sci(err);
    out.push_back(r);
  }
  using V = const std::vector<Tensor<double>>&;
  out.push_back(fd_check_op("add", {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)},
                            [](Tape<double>& t, V in) { return add(t, in[0], in[1]); }, seed + 1));
  out.push_back(fd_check_op("mul", {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)},
                            [](Tape<double>& t, V in) { return mul(t, in[0], in[1]); }, seed + 2));
  out.push_back(fd_check_op("scale", {random_tensor({5}, rng)},
                            [](Tape<double>& t, V in) { return scale(t, in[0], 2.5); }, seed + 3));
  out.push_back(fd_check_op("relu", {away_from_zero(random_tensor({4, 5}, rng))},
                            [](Tape<double>& t, V in) { return relu(t, in[0]); }, seed + 4));
  out.push_back(fd_check_op("mean", {random_tensor({6}, rng)},
                            [](Tape<double>& t, V in) { return mean(t, in[0]); }, seed + 5));
  out.push_back(fd_check_op("reshape", {random_tensor({2, 6}, rng)},
                            [](Tape<double>& t, V in) { return reshape(t, in[0], Shape{3, 4}); }, seed + 6));
  out.push_back(fd_check_op("matmul", {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)},
                            [](Tape<double>& t, V in) { return matmul(t, in[0], in[1]); }, seed + 7));
  out.push_back(fd_check_op("linear", {random_tensor({3, 5}, rng), random_tensor({4, 5}, rng), random_tensor({4}, rng)},
                            [](Tape<double>& t, V in) { return linear(t, in[0], in[1], in[2]); }, seed + 8));
  out.push_back(fd_check_op("conv2d", {random_tensor({2, 3, 5, 5}, rng), random_tensor({4, 3, 3, 3}, rng)},
                            [](Tape<double>& t, V in) { return conv2d(t, in[0], in[1], 1, 1); }, seed + 9));
  out.push_back(fd_check_op("conv2d_stride2", {random_tensor({2, 2, 6, 6}, rng), random_tensor({3, 2, 3, 3}, rng)},
                            [](Tape<double>& t, V in) { return conv2d(t, in[0], in[1], 2, 1); }, seed + 10));
  out.push_back(fd_check_op(
      "batch_norm", {random_tensor({4, 3, 2, 2}, rng), random_tensor({3}, rng, 0.3, 1.0), random_tensor({3}, rng)},
      [](Tape<double>& t, V in) {
        Tensor<double> rm(Shape{3}, 0.0), rv(Shape{3}, 1.0);
        return batch_norm(t, in[0], in[1], in[2], rm, rv, true);
      },
      seed + 11));
  out.push_back(fd_check_op("global_avg_pool", {random_tensor({2, 3, 3, 3}, rng)},
                            [](Tape<double>& t, V in) { return global_avg_pool(t, in[0]); }, seed + 12));
  out.push_back(fd_check_op("shortcut_pad", {random_tensor({2, 2, 4, 4}, rng)},
                            [](Tape<double>& t, V in) { return shortcut_pad(t, in[0], 2, 4); }, seed + 13));
  {
    std::vector<std::int32_t> labels{0, 2, 1};
    out.push_back(fd_check_op("softmax_cross_entropy", {random_tensor({3, 4}, rng)},
                              [labels](Tape<double>& t, V in) {
                                return softmax_cross_entropy(t, in[0], std::span<const std::int32_t>(labels));
                              },
                              seed + 14));
  }
  // Clip-only surrogate of the quantizer (no rounding) against the STE
  // gradient of the real quantizer, at points off the clip boundaries.
  for (int bits : {1, 2, 4}) {
    CheckResult r{"fd", "ste_vs_clip_surrogate_" + std::to_string(bits) + "bit", true, ""};
    const auto spec = QuantizerSpec::make(bits, QuantRole::weight, 0.7);
    auto x = random_tensor({64}, rng, 0.5);
    for (auto& v : x.data()) {
      const double xn = spec.gamma * v / spec.scale;
      if (std::abs(xn - spec.alpha) < 1e-3 || std::abs(xn - spec.beta) < 1e-3) v += 1e-2;
    }
    auto c = random_tensor({64}, rng);
    auto surrogate = [&](const Tensor<double>& t) {
      double acc = 0;
      for (std::size_t i = 0; i < t.numel(); ++i) {
        const double xn = std::clamp(spec.gamma * t[i] / spec.scale, spec.alpha, spec.beta);
        acc += c[i] * xn / spec.gamma;
      }
      return acc;
    };
    const auto fd = fd_gradient(surrogate, x, 1e-7);
    Tape<double> tape;
    auto xv = x.clone();
    xv.set_requires_grad(true);
    Tensor<double> s(Shape{1}, spec.scale);
    auto q = quantize(tape, xv, spec, s);
    auto loss = sum(tape, mul(tape, q, c));
    tape.backward(loss);
    double err = 0;
    const auto g = xv.grad();
    r.passed = close_rel(std::span<const double>(g.data(), g.size()), fd.data(), 1e-3, &err);
    r.detail = "rel err " + sci(err);
    out.push_back(r);
  }
  return out;
}

// Autodiff gradient through the quantizer equals (1/s) * 1[alpha < x_n < beta]
// exactly, for random points kept away from the clip boundaries.
inline std::vector<CheckResult> ste_checks(std::uint64_t seed, std::size_t points = 100000) {
  std::vector<CheckResult> out;
  std::mt19937_64 rng(seed);
  for (int bits : {1, 2, 4, 8}) {
    for (auto role : {QuantRole::weight, QuantRole::activation}) {
      CheckResult r{"ste", std::string("ste_") + to_string(role) + "_" + std::to_string(bits) + "bit", true, ""};
      std::uniform_real_distribution<double> sdist(0.05, 3.0);
      const auto spec = QuantizerSpec::make(bits, role, sdist(rng));
      const std::size_t n = points / 8;
      Tensor<float> x(Shape{n}, 0.0f, true);
      std::uniform_real_distribution<double> u(spec.alpha - 1.0, spec.beta + 1.0);
      for (auto& v : x.data()) {
        double xn;
        do xn = u(rng);
        while (std::abs(xn - spec.alpha) < 1e-3 || std::abs(xn - spec.beta) < 1e-3);
        v = static_cast<float>(xn * spec.scale / spec.gamma);
      }
      Tape<float> tape;
      Tensor<float> s(Shape{1}, static_cast<float>(spec.scale));
      auto q = quantize(tape, x, spec, s);
      auto loss = sum(tape, q);
      tape.backward(loss);
      const float inv_s = 1.0f / static_cast<float>(spec.scale);
      std::size_t bad = 0, inside = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const float xn = static_cast<float>(spec.gamma) * x[i] / static_cast<float>(spec.scale);
        const bool in = xn > static_cast<float>(spec.alpha) && xn < static_cast<float>(spec.beta);
        inside += in;
        const float expect = in ? inv_s : 0.0f;
        if (x.grad()[i] != expect) ++bad;
      }
      r.passed = bad == 0;
      r.detail = std::to_string(n) + " points, " + std::to_string(inside) + " inside clip, " + std::to_string(bad) +
                 " mismatches";
      out.push_back(r);
    }
  }
  return out;
}

inline std::vector<CheckResult> transition_checks(std::uint64_t seed, RoundingMode mode, int layers = 500) {
  std::vector<CheckResult> out;
  std::mt19937_64 rng(seed);
  {
    CheckResult r{"transitions", "random_layers", true, ""};
    std::uniform_int_distribution<std::size_t> nd(1, 1024);
    std::uniform_int_distribution<int> bd(0, 2);
    std::uniform_real_distribution<double> sd(0.05, 1.0), pd(1e-4, 0.2);
    std::normal_distribution<double> g(0.0, 1.0);
    long total = 0;
    int bad = 0;
    for (int L = 0; L < layers; ++L) {
      const int bits = std::array<int, 3>{1, 2, 4}[static_cast<std::size_t>(bd(rng))];
      const auto spec = QuantizerSpec::make(bits, QuantRole::weight, sd(rng));
      const std::size_t n = nd(rng);
      std::vector<float> w(n), w2(n);
      const double sigma = spec.scale / 3.0, pert = pd(rng) * spec.scale;
      for (std::size_t i = 0; i < n; ++i) {
        w[i] = static_cast<float>(g(rng) * sigma);
        w2[i] = static_cast<float>(w[i] + g(rng) * pert);
      }
      TransitionTracker tr;
      tr.reset<float>(std::span<const float>(w), spec);
      const double k = tr.observe<float>(std::span<const float>(w2), spec);
      const auto expect = recount_transitions<float>(std::span<const float>(w), std::span<const float>(w2),
                                                     levels_of(spec), mode);
      total += static_cast<long>(expect);
      if (k != static_cast<double>(expect) / static_cast<double>(n)) ++bad;
    }
    r.passed = bad == 0;
    r.detail = std::to_string(layers) + " layers, " + std::to_string(total) + " transitions, " + std::to_string(bad) +
               " layers mismatched";
    out.push_back(r);
  }
  {
    // A weight landing exactly on a transition point: x_n = 0.5.
    CheckResult r{"transitions", "tie_on_transition_point", true, ""};
    const auto spec = QuantizerSpec::make(2, QuantRole::weight, 1.0);
    std::vector<double> before{0.2, -0.6, 0.0}, after{0.25, -0.75, 0.0};  // x_n: 0.4->0.5, -1.2->-1.5
    TransitionTracker tr;
    tr.reset<double>(std::span<const double>(before), spec);
    tr.observe<double>(std::span<const double>(after), spec);
    const auto expect = recount_transitions<double>(std::span<const double>(before), std::span<const double>(after),
                                                    levels_of(spec), mode);
    r.passed = tr.last_changed() == expect && expect == 2;
    r.detail = "harness " + std::to_string(tr.last_changed()) + ", oracle " + std::to_string(expect);
    out.push_back(r);
  }
  {
    CheckResult r{"transitions", "single_boundary_crossing", true, ""};
    const auto spec = QuantizerSpec::make(2, QuantRole::weight, 1.0);
    std::vector<double> before{0.24, 0.1, -0.3}, after{0.26, 0.1, -0.3};
    const auto n = recount_transitions<double>(std::span<const double>(before), std::span<const double>(after),
                                               levels_of(spec), mode);
    TransitionTracker tr;
    tr.reset<double>(std::span<const double>(before), spec);
    tr.observe<double>(std::span<const double>(after), spec);
    r.passed = n == 1 && tr.last_changed() == 1;
    r.detail = "oracle " + std::to_string(n) + ", harness " + std::to_string(tr.last_changed());
    out.push_back(r);
  }
  {
    CheckResult r{"transitions", "identical_snapshots", true, ""};
    std::vector<double> w{0.1, -0.2, 0.3};
    const auto spec = QuantizerSpec::make(4, QuantRole::weight, 0.5);
    r.passed = recount_transitions<double>(std::span<const double>(w), std::span<const double>(w), levels_of(spec), mode) == 0;
    r.detail = "no change, no transitions";
    out.push_back(r);
  }
  return out;
}

inline std::vector<CheckResult> ess_checks(std::uint64_t seed) {
  std::vector<CheckResult> out;
  std::mt19937_64 rng(seed);
  for (int bits : {2, 3, 4}) {
    CheckResult r{"ess", "single_level_identity_" + std::to_string(bits) + "bit", true, ""};
    const auto spec = QuantizerSpec::make(bits, QuantRole::weight, 1.0);
    const std::size_t n = 512;
    std::uniform_int_distribution<int> code(static_cast<int>(spec.alpha), static_cast<int>(spec.beta));
    std::bernoulli_distribution flip(0.2), up(0.5);
    std::vector<double> before(n), after(n);
    for (std::size_t i = 0; i < n; ++i) {
      const int c = code(rng);
      int c2 = c;
      if (flip(rng)) c2 = (up(rng) && c < spec.beta) || c == spec.alpha ? c + 1 : c - 1;
      // latent values a quarter level inside the code's rounding cell
      before[i] = (c + 0.25) * spec.scale / spec.gamma;
      after[i] = (c2 - 0.25) * spec.scale / spec.gamma;
    }
    const auto qb = quantize_forward<double>(std::span<const double>(before), spec);
    const auto qa = quantize_forward<double>(std::span<const double>(after), spec);
    std::vector<std::int64_t> cb(qb.codes.begin(), qb.codes.end()), ca(qa.codes.begin(), qa.codes.end());
    const auto rep = verify_ess_identity(qb.values, qa.values, cb, ca, spec.level_spacing());
    const double k = compute_tr(qb.codes, qa.codes);
    const double avg = avg_effective_step_size<double>(std::span<const double>(qb.values), std::span<const double>(qa.values));
    const double gap = std::abs(avg - spec.level_spacing() * k);
    r.passed = rep.holds && gap <= 1e-12;
    r.detail = "k=" + std::to_string(k) + ", |avg ess - k/gamma| = " + std::to_string(gap);
    out.push_back(r);
  }
  {
    CheckResult r{"ess", "binary_weights_delta_two_over_gamma", true, ""};
    const auto spec = QuantizerSpec::make(1, QuantRole::weight, 1.0);
    std::vector<double> before{-0.3, 0.2, 0.5, -0.1}, after{0.3, 0.2, -0.5, -0.2};
    const auto qb = quantize_forward<double>(std::span<const double>(before), spec);
    const auto qa = quantize_forward<double>(std::span<const double>(after), spec);
    std::vector<std::int64_t> cb(qb.codes.begin(), qb.codes.end()), ca(qa.codes.begin(), qa.codes.end());
    const auto rep = verify_ess_identity(qb.values, qa.values, cb, ca, spec.level_spacing(), 2);
    r.passed = rep.holds && std::abs(rep.avg_ess - 2.0 * 0.5) <= 1e-12;
    r.detail = "avg ess " + std::to_string(rep.avg_ess) + " for k=0.5";
    out.push_back(r);
  }
  {
    CheckResult r{"ess", "two_level_jump_flagged", true, ""};
    const auto spec = QuantizerSpec::make(2, QuantRole::weight, 1.0);
    std::vector<double> before{-0.8, 0.0}, after{0.05, 0.0};  // code -2 -> 0
    const auto qb = quantize_forward<double>(std::span<const double>(before), spec);
    const auto qa = quantize_forward<double>(std::span<const double>(after), spec);
    std::vector<std::int64_t> cb(qb.codes.begin(), qb.codes.end()), ca(qa.codes.begin(), qa.codes.end());
    const auto rep = verify_ess_identity(qb.values, qa.values, cb, ca, spec.level_spacing());
    const double jump = std::abs(qa.values[0] - qb.values[0]);
    r.passed = !rep.holds && rep.multi_level.size() == 1 && rep.multi_level[0] == 0 && rep.violations.empty() &&
               std::abs(jump - 2.0 * spec.level_spacing()) <= 1e-12;
    r.detail = "flagged " + std::to_string(rep.multi_level.size()) + " element(s), |dw_q| = " + std::to_string(jump);
    out.push_back(r);
  }
  {
    CheckResult r{"ess", "no_transitions_all_zero", true, ""};
    const auto spec = QuantizerSpec::make(4, QuantRole::weight, 1.0);
    std::vector<double> w{0.01, 0.2, -0.3};
    const auto q = quantize_forward<double>(std::span<const double>(w), spec);
    std::vector<std::int64_t> c(q.codes.begin(), q.codes.end());
    const auto rep = verify_ess_identity(q.values, q.values, c, c, spec.level_spacing());
    r.passed = rep.holds && rep.avg_ess == 0.0;
    r.detail = "avg ess " + std::to_string(rep.avg_ess);
    out.push_back(r);
  }
  return out;
}

inline std::vector<CheckResult> controller_checks() {
  std::vector<CheckResult> out;
  auto plant = [](double U) { return std::min(1.0, 10.0 * U); };
  {
    CheckResult r{"controller", "additive_converges_linear_plant", true, ""};
    ControllerSim sim;
    sim.u0 = 0.1;
    sim.gain = 0.1;
    sim.steps = 5000;
    const auto tr = simulate_controller(plant, [](long) { return 0.01; }, sim);
    const long from = settled_from(tr, 1e-3);
    const long bound = static_cast<long>(10.0 / sim.gain * std::max(1.0, 1.0 / 10.0));
    r.passed = from >= 0 && from <= bound;
    r.detail = "settled from step " + std::to_string(from) + " (bound " + std::to_string(bound) + ")";
    out.push_back(r);
  }
  {
    CheckResult r{"controller", "flat_when_on_target", true, ""};
    ControllerSim sim;
    sim.u0 = 0.001;
    sim.steps = 200;
    const double on_target = plant(sim.u0);
    const auto tr = simulate_controller(plant, [on_target](long) { return on_target; }, sim);
    bool flat = true;
    for (double u : tr.U) flat = flat && u == sim.u0;
    r.passed = flat;
    r.detail = flat ? "U constant" : "U moved";
    out.push_back(r);
  }
  {
    // Same closed loop driven through the library controller.
    CheckResult r{"controller", "library_matches_simulation", true, ""};
    for (auto rule : {TalrRule::additive, TalrRule::multiplicative, TalrRule::momentum}) {
      ControllerSim sim;
      sim.rule = rule == TalrRule::additive ? ControllerRule::additive
                 : rule == TalrRule::multiplicative ? ControllerRule::multiplicative
                                                     : ControllerRule::momentum;
      sim.u0 = 0.05;
      sim.gain = 0.05;
      sim.rule_m = 0.9;
      sim.ema_m = 0.99;
      sim.steps = 3000;
      auto target = [](long t) { return 0.02 / std::pow(5.0, static_cast<double>(t / 1000)); };
      const auto ref = simulate_controller(plant, target, sim);
      TrControllerState st;
      st.talr = sim.u0;
      st.gain = sim.gain;
      st.rule = rule;
      st.momentum_m = sim.rule_m;
      TrController c(st, sim.ema_m);
      double worst = 0.0;
      for (long t = 1; t <= sim.steps; ++t) {
        const double U = c.observe(plant(c.talr()), target(t));
        worst = std::max(worst, std::abs(U - ref.U[static_cast<std::size_t>(t - 1)]));
      }
      if (worst > 1e-12) {
        r.passed = false;
        r.detail += std::string(to_string(rule)) + " max |dU| " + std::to_string(worst) + "; ";
      }
    }
    if (r.passed) r.detail = "additive, multiplicative and momentum rules agree to 1e-12";
    out.push_back(r);
  }
  {
    // Abrupt step-down of the target: the multiplicative rule overshoots more.
    CheckResult r{"controller", "multiplicative_overshoots_on_step_down", true, ""};
    auto target = [](long t) { return t < 500 ? 0.05 : 0.01; };
    auto undershoot = [&](ControllerRule rule) {
      ControllerSim sim;
      sim.rule = rule;
      sim.u0 = 0.005;
      sim.gain = 0.05;
      sim.ema_m = 0.9;
      sim.steps = 1500;
      const auto tr = simulate_controller(plant, target, sim);
      double worst = 0.0;
      // how far K falls below the new, lower target
      for (std::size_t i = 500; i < tr.K.size(); ++i) worst = std::max(worst, tr.R[i] - tr.K[i]);
      return worst;
    };
    const double add = undershoot(ControllerRule::additive), mult = undershoot(ControllerRule::multiplicative);
    r.passed = mult > add;
    r.detail = "max undershoot R-K after step: additive " + std::to_string(add) + ", multiplicative " + std::to_string(mult);
    out.push_back(r);
  }
  return out;
}

inline std::vector<CheckResult> scale_interval_checks(RoundingMode mode) {
  CheckResult r{"scale_interval", "scale_shrink_moves_codes", true, ""};
  // Weights fixed, scale 0.3 -> 0.2 (2-bit): -0.2 moves from level -1 to -2.
  const auto s3 = QuantizerSpec::make(2, QuantRole::weight, 0.3);
  const auto s2 = QuantizerSpec::make(2, QuantRole::weight, 0.2);
  std::vector<double> w{-0.2, 0.01, 0.12, -0.05};
  const auto n = recount_transitions<double>(std::span<const double>(w), std::span<const double>(w), levels_of(s3),
                                             levels_of(s2), mode);
  const auto c3 = quantize_forward<double>(std::span<const double>(w), s3).codes;
  const auto c2 = quantize_forward<double>(std::span<const double>(w), s2).codes;
  r.passed = n > 0 && c3[0] == -1 && c2[0] == -2 && n == count_codes_changed(c3, c2);
  r.detail = std::to_string(n) + " transitions with unchanged latent weights";
  return {r};
}

inline std::vector<CheckResult> run_suite(const SuiteOptions& opt) {
  const RoundingMode mode =
      opt.inject_fault == "rounding" ? RoundingMode::half_to_even : RoundingMode::half_away_from_zero;
  if (!opt.inject_fault.empty() && opt.inject_fault != "rounding") {
    throw std::invalid_argument("unknown fault '" + opt.inject_fault + "' (known: rounding)");
  }
  std::vector<CheckResult> all;
  auto want = [&](const std::string& g) { return opt.filter.empty() || g.find(opt.filter) != std::string::npos; };
  auto take = [&](std::vector<CheckResult> v) { all.insert(all.end(), v.begin(), v.end()); };
  if (want("fd")) take(fd_checks(opt.seed));
  if (want("ste")) take(ste_checks(opt.seed + 1));
  if (want("transitions")) take(transition_checks(opt.seed + 2, mode));
  if (want("ess")) take(ess_checks(opt.seed + 3));
  if (want("controller")) take(controller_checks());
  if (want("scale_interval")) take(scale_interval_checks(mode));
  return all;
}

inline nlohmann::json to_json(const std::vector<CheckResult>& results) {
  nlohmann::json j;
  bool ok = !results.empty();
  j["checks"] = nlohmann::json::array();
  for (const auto& r : results) {
    ok = ok && r.passed;
    j["checks"].push_back({{"group", r.group}, {"name", r.name}, {"passed", r.passed}, {"detail", r.detail}});
  }
  j["passed"] = ok;
  j["count"] = results.size();
  return j;
}

}  // namespace qat::oracle
