// Acceptance suite. One line per criterion:
//   [PASS] C<n> <title>: <measured values>  (<seconds> s)
// Criterion 8 is soft: reported, never gated. Exit status is 1 when any
// gated criterion fails.
//
//   qat_acceptance            run everything
//   qat_acceptance 2 5 10     run a subset (10 reuses 5's run when both are selected)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "qat/qat.hpp"

namespace fs = std::filesystem;
using namespace qat;

namespace {

// ---- pinned tolerances ----------------------------------------------------
constexpr double kControllerTol = 1e-12;     // C1
constexpr long kNonnegSequences = 1000000;   // C1
constexpr int kTransitionLayers = 500;       // C2
constexpr double kEssTol = 1e-12;            // C3 (asserted inside the ESS checks)
constexpr std::size_t kStePoints = 100000;   // C4
constexpr double kFdRelTol = 1e-3;           // C4 (asserted inside the FD checks)
constexpr double kWarmupFraction = 0.05;     // C5
constexpr double kTrackRel = 0.30;           // C5
constexpr double kTrackAbs = 2e-4;           // C5, used when R < kTrackSmallR
constexpr double kTrackSmallR = 1e-3;        // C5
constexpr double kTrackMinFraction = 0.90;   // C5
constexpr long kEquivSteps = 500;            // C6
constexpr double kOverheadMax = 1.05;        // C7
constexpr int kOverheadRuns = 7;             // C7, per arm
constexpr int kControlRuns = 5;              // C7, plain-vs-plain noise control
constexpr long kOverheadSteps = 80;          // C7
constexpr double kQualitySlack = 0.002;      // C8, 0.2 accuracy points
constexpr long kSegment = 1000;              // C9
constexpr int kSegments = 3;                 // C9
constexpr double kSlopeMax = 0.0;            // C9

struct Outcome {
  bool passed = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* title;
  bool gated;
  std::function<Outcome()> run;
};

fs::path source_dir() { return fs::path(QAT_SOURCE_DIR); }

TrainConfig config_from(const fs::path& file, const std::vector<std::pair<std::string, std::string>>& overrides = {}) {
  TrainConfig c = load_config(file);
  for (const auto& [k, v] : overrides) set_config_value(c, k, v);
  c.validate();
  return c;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double ls_slope(const std::vector<double>& y, long lo, long hi) {
  double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (long t = lo; t < hi; ++t) {
    const double x = static_cast<double>(t - lo);
    n += 1;
    sx += x;
    sy += y[static_cast<std::size_t>(t)];
    sxx += x * x;
    sxy += x * y[static_cast<std::size_t>(t)];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

std::string failed_names(const std::vector<oracle::CheckResult>& rs) {
  std::string s;
  for (const auto& r : rs)
    if (!r.passed) s += (s.empty() ? "" : ", ") + r.group + "/" + r.name + " (" + r.detail + ")";
  return s;
}

// ---- C1 -------------------------------------------------------------------
Outcome controller_arithmetic() {
  struct Case {
    const char* name;
    TalrRule rule;
    double U, gain, m, R, K, expect;
  };
  const std::vector<Case> cases{
      {"additive step", TalrRule::additive, 0.1, 0.1, 0.0, 0.005, 0.003, 0.1002},
      {"additive on target", TalrRule::additive, 0.1, 0.1, 0.0, 0.004, 0.004, 0.1},
      {"additive clamp", TalrRule::additive, 0.0001, 0.1, 0.0, 0.0, 0.01, 0.0},
      {"multiplicative on target", TalrRule::multiplicative, 0.1, 0.0, 0.0, 0.007, 0.007, 0.1},
      {"multiplicative ratio", TalrRule::multiplicative, 0.1, 0.0, 0.0, 0.01, 0.005, 0.2},
      {"multiplicative zero target", TalrRule::multiplicative, 0.1, 0.0, 0.0, 0.0, 0.005, 0.0},
      {"momentum on target", TalrRule::momentum, 0.1, 0.0, 0.99, 0.003, 0.003, 0.1},
      {"momentum m'=0", TalrRule::momentum, 0.1, 0.0, 0.0, 0.01, 0.005, 0.2},
      {"momentum ratio", TalrRule::momentum, 0.1, 0.0, 0.99, 0.01, 0.005, 0.101},
  };
  std::string bad;
  double worst = 0.0;
  for (const auto& c : cases) {
    TrControllerState s;
    s.rule = c.rule;
    s.talr = c.U;
    s.gain = c.gain;
    s.momentum_m = c.m;
    const double got = update_talr(s, c.R, c.K).talr;
    worst = std::max(worst, std::abs(got - c.expect));
    if (!(std::abs(got - c.expect) <= kControllerTol)) bad += std::string(bad.empty() ? "" : ", ") + c.name;
  }
  // ratio rules skip (and count) when K = 0
  for (auto rule : {TalrRule::multiplicative, TalrRule::momentum}) {
    TrControllerState s;
    s.rule = rule;
    s.talr = 0.1;
    const auto n = update_talr(s, 0.01, 0.0);
    if (n.talr != 0.1 || n.skipped_updates != 1) bad += std::string(bad.empty() ? "" : ", ") + "skip on K=0";
  }

  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_int_distribution<int> rule_d(0, 2), len_d(1, 16);
  long negatives = 0, updates = 0;
  for (long q = 0; q < kNonnegSequences; ++q) {
    TrControllerState s;
    s.rule = static_cast<TalrRule>(rule_d(rng));
    s.talr = u01(rng) < 0.1 ? 0.0 : std::pow(10.0, -6.0 + 6.0 * u01(rng));
    s.gain = std::pow(10.0, -4.0 + 5.0 * u01(rng));
    s.momentum_m = 0.999 * u01(rng);
    const int len = len_d(rng);
    for (int i = 0; i < len; ++i) {
      const double R = u01(rng) < 0.1 ? 0.0 : std::pow(10.0, -6.0 + 6.0 * u01(rng));
      const double K = u01(rng) < 0.1 ? 0.0 : u01(rng);
      s = update_talr(s, R, K);
      ++updates;
      if (!(s.talr >= 0.0) || !std::isfinite(s.talr)) ++negatives;
    }
  }

  const auto lib = oracle::controller_checks();
  const auto lib_bad = failed_names(lib);
  Outcome o;
  o.passed = bad.empty() && negatives == 0 && lib_bad.empty();
  o.detail = std::to_string(cases.size()) + " examples, max |err| " + fmt("%.1e", worst) + "; " +
             std::to_string(kNonnegSequences) + " sequences / " + std::to_string(updates) + " updates, " +
             std::to_string(negatives) + " negative U; " + std::to_string(lib.size()) + " simulation checks" +
             (bad.empty() ? "" : "; failed: " + bad) + (lib_bad.empty() ? "" : "; " + lib_bad);
  return o;
}

// ---- C2 -------------------------------------------------------------------
Outcome transition_equivalence() {
  const auto rs = oracle::transition_checks(7, oracle::RoundingMode::half_away_from_zero, kTransitionLayers);
  // the trainer's own per-step oracle, every step of a short run
  TrainConfig c = config_from(source_dir() / "configs/smoke.toml", {{"metrics.oracle_every", "1"}, {"steps", "100"}});
  const auto m = run_training(c);
  Outcome o;
  const auto bad = failed_names(rs);
  o.passed = bad.empty() && m.oracle_checks > 0 && m.oracle_mismatches.empty();
  std::string first = rs.empty() ? "" : rs.front().detail;
  o.detail = first + "; training harness " + std::to_string(m.oracle_checks) + " layer-steps re-counted, " +
             std::to_string(m.oracle_mismatches.size()) + " mismatches" + (bad.empty() ? "" : "; " + bad);
  return o;
}

// ---- C3 -------------------------------------------------------------------
Outcome ess_identity() {
  const auto rs = oracle::ess_checks(11);
  const auto bad = failed_names(rs);
  Outcome o;
  o.passed = bad.empty() && !rs.empty();
  o.detail = std::to_string(rs.size()) + " checks (identity to " + fmt("%.0e", kEssTol) +
             ", multi-level jumps flagged)" + (bad.empty() ? "" : "; " + bad);
  return o;
}

// ---- C4 -------------------------------------------------------------------
Outcome ste_contract() {
  const auto ste = oracle::ste_checks(13, kStePoints);
  std::vector<oracle::CheckResult> fd;
  for (auto& r : oracle::fd_checks(17))
    if (r.name.rfind("ste_vs_clip_surrogate", 0) == 0) fd.push_back(r);
  std::size_t mism = 0;
  for (const auto& r : ste) {
    // "... , <n> mismatches"
    const auto p = r.detail.rfind(", ");
    mism += static_cast<std::size_t>(std::stoul(r.detail.substr(p + 2)));
  }
  const auto bad = failed_names(ste) + failed_names(fd);
  Outcome o;
  o.passed = bad.empty() && ste.size() == 8 && fd.size() == 3;
  std::string fds;
  for (const auto& r : fd) fds += (fds.empty() ? "" : ", ") + r.detail;
  o.detail = std::to_string(kStePoints) + " points, " + std::to_string(mism) + " STE mismatches; surrogate FD (" +
             fmt("%.0e", kFdRelTol) + " rel) " + fds + (bad.empty() ? "" : "; " + bad);
  return o;
}

// ---- C5 / C10 -------------------------------------------------------------
TrainConfig tracking_config() { return config_from(source_dir() / "configs/tracking.toml"); }

std::optional<RunMetrics> tracking_run;

const RunMetrics& tracking_metrics() {
  if (!tracking_run) tracking_run = run_training(tracking_config());
  return *tracking_run;
}

Outcome closed_loop_tracking() {
  const TrainConfig c = tracking_config();
  const RunMetrics& m = tracking_metrics();
  const long warm = static_cast<long>(std::ceil(kWarmupFraction * static_cast<double>(c.steps)));
  std::map<std::string, std::pair<long, long>> per_layer;
  std::map<std::string, std::pair<double, double>> dist;  // first and last logged
  long good = 0, total = 0;
  for (const auto& r : m.rows) {
    if (!std::isnan(r.dist_tp)) {
      auto& d = dist.try_emplace(r.layer, r.dist_tp, r.dist_tp).first->second;
      d.second = r.dist_tp;
    }
    if (r.step <= warm) continue;
    const bool ok = r.R < kTrackSmallR ? std::abs(r.K - r.R) <= kTrackAbs : std::abs(r.K - r.R) <= kTrackRel * r.R;
    good += ok;
    ++total;
    per_layer[r.layer].first += ok;
    ++per_layer[r.layer].second;
  }
  const double frac = total ? static_cast<double>(good) / static_cast<double>(total) : 0.0;
  Outcome o;
  o.passed = !m.diverged && total > 0 && frac >= kTrackMinFraction;
  o.detail = fmt("%.4f", frac) + " of " + std::to_string(total) + " rows in band (need " +
             fmt("%.2f", kTrackMinFraction) + "; per layer";
  for (const auto& [l, p] : per_layer)
    o.detail += " " + l + "=" + fmt("%.3f", static_cast<double>(p.first) / static_cast<double>(p.second));
  o.detail += "); dist to transition points first->last:";
  for (const auto& [l, d] : dist) o.detail += " " + l + " " + fmt("%.3f", d.first) + "->" + fmt("%.3f", d.second);
  o.detail += "; oracle mismatches " + std::to_string(m.oracle_mismatches.size());
  return o;
}

Outcome determinism() {
  const RunMetrics& a = tracking_metrics();
  const RunMetrics b = run_training(tracking_config());
  std::ostringstream sa, sb;
  write_steps_csv(sa, a.rows);
  write_steps_csv(sb, b.rows);
  Outcome o;
  o.passed = sa.str() == sb.str() && !sa.str().empty();
  o.detail = "steps CSV " + std::to_string(sa.str().size()) + " vs " + std::to_string(sb.str().size()) + " bytes, " +
             (o.passed ? "identical" : "differ");
  return o;
}

// ---- C6 -------------------------------------------------------------------
Outcome baseline_equivalence() {
  std::string detail;
  bool all = true;
  for (const std::string opt : {"sgd", "adam"}) {
    std::string label = opt == "sgd" ? "SGD" : "Adam";
    auto base = config_from(source_dir() / "configs/tracking.toml",
                            {{"optimizer", opt}, {"lr", opt == "sgd" ? "0.1" : "1e-3"}, {"steps", std::to_string(kEquivSteps)},
                             {"quant.train_weight_scale", "false"}, {"metrics.level", "minimal"},
                             {"metrics.eval_every", "0"}, {"metrics.oracle_every", "0"}});
    TrainConfig plain = base, pinned = base;
    plain.tr_enabled = false;
    pinned.tr_enabled = true;
    pinned.tr_pin_to_lr = true;
    const DataBundle data = load_data(base);
    Trainer<float> ta(plain, data), tb(pinned, data);
    const auto ma = ta.run(), mb = tb.run();
    auto losses = [](const RunMetrics& m) {
      std::vector<double> l;
      for (const auto& r : m.rows)
        if (l.size() < static_cast<std::size_t>(r.step)) l.push_back(r.loss);
      return l;
    };
    const auto la = losses(ma), lb = losses(mb);
    std::size_t tensors = 0, differing = 0;
    const auto ca = ta.checkpoint(), cb = tb.checkpoint();
    for (const auto& [name, t] : ca.tensors) {
      ++tensors;
      auto it = cb.tensors.find(name);
      if (it == cb.tensors.end() || it->second.values != t.values) ++differing;
    }
    const bool ok = la.size() == static_cast<std::size_t>(kEquivSteps) && la == lb && differing == 0;
    all = all && ok;
    detail += (detail.empty() ? "" : "; ") + label + " vs " + label + "T: " + std::to_string(la.size()) + " losses " +
              (la == lb ? "equal" : "differ") + ", " + std::to_string(differing) + "/" + std::to_string(tensors) +
              " tensors differ";
  }
  return {all, detail};
}

// ---- C7 / C8 --------------------------------------------------------------
fs::path mnist_dir() { return source_dir() / "data/mnist-10k"; }

TrainConfig mnist_config(const std::vector<std::pair<std::string, std::string>>& extra = {}) {
  auto o = extra;
  o.insert(o.begin(), {"data.path", mnist_dir().string()});
  return config_from(source_dir() / "configs/mnist.toml", o);
}

Outcome overhead() {
  if (!fs::exists(mnist_dir())) return {false, "MNIST subset missing at " + mnist_dir().string()};
  const TrainConfig c = mnist_config({{"steps", std::to_string(kOverheadSteps)}, {"quant.train_weight_scale", "false"}});
  const DataBundle data = load_data(c);
  const auto control = measure_overhead(c, data, kControlRuns, OverheadArm::plain);
  const auto tr = measure_overhead(c, data, kOverheadRuns, OverheadArm::tr);
  Outcome o;
  o.passed = tr.ratio <= kOverheadMax;
  o.detail = "median " + fmt("%.2f", tr.tr_seconds) + " s with TR vs " + fmt("%.2f", tr.plain_seconds) +
             " s plain over " + std::to_string(kOverheadSteps) + " steps, ratio " + fmt("%.4f", tr.ratio) + " (max " +
             fmt("%.2f", kOverheadMax) + "); plain-vs-plain control ratio " + fmt("%.4f", control.ratio);
  return o;
}

Outcome directional_quality() {
  if (!fs::exists(mnist_dir())) return {false, "MNIST subset missing at " + mnist_dir().string()};
  const DataBundle data = load_data(mnist_config());
  bool ok = true;
  std::string detail;
  for (int bits : {1, 2}) {
    double sum[2] = {0.0, 0.0};
    std::string per_seed;
    for (int seed : {11, 12, 13}) {
      for (int tr = 0; tr < 2; ++tr) {
        const auto c = mnist_config({{"bits.w", std::to_string(bits)}, {"bits.a", std::to_string(bits)},
                                     {"seed", std::to_string(seed)}, {"tr.enabled", tr ? "true" : "false"},
                                     {"metrics.eval_every", "1000"}});
        const auto m = run_training(c, data);
        const double acc = m.diverged ? 0.0 : m.final_test_acc;
        sum[tr] += acc;
        per_seed += std::string(per_seed.empty() ? "" : " ") + (tr ? "T" : "") + fmt("%.3f", acc);
      }
    }
    const double sgd = sum[0] / 3.0, sgdt = sum[1] / 3.0;
    const bool pass = sgdt >= sgd - kQualitySlack;
    ok = ok && pass;
    detail += (detail.empty() ? "" : "; ") + std::to_string(bits) + "/" + std::to_string(bits) + " bits SGD " +
              fmt("%.4f", sgd) + " SGDT " + fmt("%.4f", sgdt) + (pass ? "" : " REGRESSION") + " [" + per_seed + "]";
  }
  return {ok, detail};
}

// ---- C9 -------------------------------------------------------------------
// Latent weights sit close to the half-integer transition points of a 2-bit
// quantizer; the gradient pulls them further in (a quadratic well around each
// point) plus unit noise. The real optimizer (SGD with a TALR group), tracker
// and additive controller run the loop against a step target schedule.
Outcome step_schedule_trend() {
  constexpr std::size_t N = 16384;
  constexpr double kPull = 1.0, kNoise = 1.0, kSpread = 0.05, kU0 = 3e-4, kGain = 5e-5;
  const long T = kSegment * kSegments;
  const auto spec = QuantizerSpec::make(2, QuantRole::weight, 1.0);
  const double tps[3] = {-1.5, -0.5, 0.5};
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_int_distribution<int> pick(0, 2);

  Tensor<float> w(Shape{N}, 0.0f, true);
  auto d = w.data();
  for (auto& v : d) v = static_cast<float>((tps[pick(rng)] + kSpread * nd(rng)) * spec.scale / spec.gamma);
  Optimizer<float> opt(OptimizerKind::sgd);
  ParamGroup<float> g;
  g.name = "latent";
  g.params = {w};
  g.mode = UpdateMode::talr;
  const auto gi = opt.add_group(g);
  TransitionTracker tracker;
  tracker.reset<float>(d, spec);
  TrControllerState st;
  st.rule = TalrRule::additive;
  st.talr = kU0;
  st.gain = kGain;
  TrController ctl(st, 0.99);
  const Schedule target{ScheduleKind::step, initial_target_tr(5e-3, 2), T, kSegment, 5.0};

  std::vector<double> U{kU0}, dist;
  std::vector<double> wn(N);
  for (long t = 1; t <= T; ++t) {
    opt.zero_grad();
    auto gr = w.grad();
    for (std::size_t i = 0; i < N; ++i) {
      const double x = normalize_value<double>(d[i], spec);
      double tp = tps[0];
      for (double p : tps)
        if (std::abs(x - p) < std::abs(x - tp)) tp = p;
      gr[i] = static_cast<float>(kPull * (x - tp) + kNoise * nd(rng));
    }
    opt.set_talr(gi, ctl.talr());
    opt.step(0.0);
    const double k = tracker.observe<float>(d, spec);
    U.push_back(ctl.observe(k, target.value(t)));
    if (t % kSegment == 0 || t == 1) {
      for (std::size_t i = 0; i < N; ++i) wn[i] = normalize_value<double>(d[i], spec);
      dist.push_back(mean_distance_to_transition_points<double>(wn, spec));
    }
  }
  bool ok = true;
  std::string detail = "slopes of U over each segment's second half:";
  for (int s = 0; s < kSegments; ++s) {
    const long lo = s * kSegment + kSegment / 2, hi = (s + 1) * kSegment + 1;
    const double slope = ls_slope(U, lo, hi);
    ok = ok && slope <= kSlopeMax;
    detail += " " + fmt("%.2e", slope);
  }
  detail += "; U " + fmt("%.2e", U.front()) + "->" + fmt("%.2e", U.back()) + "; dist to transition points";
  for (double x : dist) detail += " " + fmt("%.3f", x);
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  const std::vector<Criterion> all{
      {1, "controller arithmetic", true, controller_arithmetic},
      {2, "TR oracle equivalence", true, transition_equivalence},
      {3, "ESS identity", true, ess_identity},
      {4, "STE gradient contract", true, ste_contract},
      {5, "closed-loop tracking", true, closed_loop_tracking},
      {6, "baseline equivalence", true, baseline_equivalence},
      {7, "TR overhead", true, overhead},
      {8, "directional quality (soft)", false, directional_quality},
      {9, "step-schedule TALR trend", true, step_schedule_trend},
      {10, "determinism", true, determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int gated_failures = 0;
  for (const auto& c : all) {
    if (!only.empty() && !only.contains(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const char* tag = o.passed ? "PASS" : (c.gated ? "FAIL" : "WARN");
    std::printf("[%s] C%d %s: %s  (%.1f s)\n", tag, c.id, c.title, o.detail.c_str(), secs);
    std::fflush(stdout);
    if (!o.passed && c.gated) ++gated_failures;
  }
  std::printf("%d gated failure(s)\n", gated_failures);
  return gated_failures ? 1 : 0;
}
