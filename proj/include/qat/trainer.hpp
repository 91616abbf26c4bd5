#pragma once

// Training loop with per-layer transition tracking and TALR control.
//
// Per step t: forward (quantized) -> backward (STE) -> gradient terms ->
// update with mu^t (plain groups) or U^{t-1} (TALR groups) -> k^t from the
// re-quantized latents -> K^t -> U^t.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>
#include <memory>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "qat/checkpoint.hpp"
#include "qat/config.hpp"
#include "qat/data.hpp"
#include "qat/metrics.hpp"
#include "qat/model.hpp"
#include "qat/optim.hpp"
#include "qat/oracle.hpp"
#include "qat/scheduler.hpp"

namespace qat {

inline constexpr double kNotLogged = std::numeric_limits<double>::quiet_NaN();

// One row per (step, quantized layer). Fields that are not measured in a
// given mode stay NaN and are written as empty cells.
struct StepRow {
  long step = 0;
  std::string layer;
  double k = kNotLogged, K = kNotLogged, R = kNotLogged, U = kNotLogged;
  double ess_latent = kNotLogged, ess_quant = kNotLogged, dist_tp = kNotLogged;
  double loss = kNotLogged;
};

struct EpochRow {
  long epoch = 0;
  long step = 0;
  double train_loss = 0.0;
  double test_acc = 0.0;
  double seconds = 0.0;
};

struct OracleMismatch {
  long step;
  std::string layer;
  std::size_t harness;
  std::size_t oracle;
};

struct RunMetrics {
  std::vector<StepRow> rows;
  std::vector<EpochRow> epochs;
  std::vector<std::string> layers;
  bool diverged = false;
  long diverged_at = -1;
  std::string diverged_reason;
  long steps = 0;
  double final_test_acc = kNotLogged;
  double wall_seconds = 0.0;
  double train_seconds = 0.0;  // optimization steps only, evaluation excluded
  long oracle_checks = 0;
  std::vector<OracleMismatch> oracle_mismatches;
  std::vector<std::string> routing_violations;
  std::vector<long> skipped_updates;  // per layer, ratio rules with K = 0
};

namespace detail {
inline void put_number(std::ostream& os, double v) {
  if (std::isnan(v)) return;
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  os.write(buf, p - buf);
}
}  // namespace detail

inline constexpr const char* kStepCsvHeader = "step,layer,k,K,R,U,ess_latent,ess_quant,dist_tp,loss";

inline void write_steps_csv(std::ostream& os, const std::vector<StepRow>& rows) {
  os << kStepCsvHeader << '\n';
  for (const auto& r : rows) {
    os << r.step << ',' << r.layer;
    for (double v : {r.k, r.K, r.R, r.U, r.ess_latent, r.ess_quant, r.dist_tp, r.loss}) {
      os << ',';
      detail::put_number(os, v);
    }
    os << '\n';
  }
}

inline void write_epochs_csv(std::ostream& os, const std::vector<EpochRow>& rows) {
  os << "epoch,step,train_loss,test_acc,seconds\n";
  for (const auto& r : rows) {
    os << r.epoch << ',' << r.step << ',';
    detail::put_number(os, r.train_loss);
    os << ',';
    detail::put_number(os, r.test_acc);
    os << ',';
    detail::put_number(os, r.seconds);
    os << '\n';
  }
}

struct DataBundle {
  Dataset train;
  Dataset test;
  Standardizer norm;
};

// Reads the configured dataset and standardizes both splits with statistics
// fitted on the training split.
inline DataBundle load_data(const TrainConfig& cfg) {
  DataBundle b;
  namespace fs = std::filesystem;
  switch (cfg.data) {
    case DataKind::synthetic:
      b.train = make_synthetic(cfg.synth_classes, cfg.synth_per_class, cfg.synth_dim, cfg.seed, cfg.synth_noise, 0);
      b.test = make_synthetic(cfg.synth_classes, cfg.synth_test_per_class, cfg.synth_dim, cfg.seed, cfg.synth_noise, 1);
      b.test.split = Split::test;
      break;
    case DataKind::mnist: {
      const fs::path dir(cfg.data_path);
      if (!fs::is_directory(dir)) throw DataError("MNIST directory '" + cfg.data_path + "' does not exist");
      b.train = load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
      b.test = load_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
      b.test.split = Split::test;
      break;
    }
    case DataKind::cifar10: {
      const fs::path dir(cfg.data_path);
      if (!fs::is_directory(dir)) throw DataError("CIFAR-10 directory '" + cfg.data_path + "' does not exist");
      std::vector<fs::path> train_files;
      for (int i = 1; i <= 5; ++i) {
        auto p = dir / ("data_batch_" + std::to_string(i) + ".bin");
        if (fs::exists(p)) train_files.push_back(p);
      }
      if (train_files.empty()) throw DataError("no data_batch_*.bin files in '" + cfg.data_path + "'");
      b.train = load_cifar_bin(train_files);
      b.test = load_cifar_bin({dir / "test_batch.bin"});
      b.test.split = Split::test;
      break;
    }
  }
  b.train = take_subset(b.train, cfg.train_subset);
  b.test = take_subset(b.test, cfg.test_subset);
  b.norm = Standardizer::fit(b.train);
  b.norm.apply(b.train);
  b.norm.apply(b.test);
  return b;
}

// Copies latent weights by name, then re-derives quantizer scales from them.
template <typename T>
void init_from_pretrained(Model<T>& model, const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw CheckpointError("checkpoint '" + path.string() + "' does not exist");
  const Checkpoint ck = load_checkpoint(path);
  load_model_tensors(model, ck, true);
  model.reinit_quantizer_scales();
}

template <typename T>
class Trainer {
 public:
  Trainer(TrainConfig cfg, const DataBundle& data) : cfg_(std::move(cfg)), data_(&data) {
    cfg_.validate();
    ModelConfig mc;
    mc.kind = cfg_.model;
    mc.in_channels = data.train.channels;
    mc.height = data.train.height;
    mc.width = data.train.width;
    mc.num_classes = data.train.num_classes;
    mc.bits_w = cfg_.bits_w;
    mc.bits_a = cfg_.bits_a;
    mc.width_mult = cfg_.width_mult;
    mc.seed = cfg_.seed;
    model_ = make_model<T>(mc);
    if (!cfg_.init_checkpoint.empty()) init_from_pretrained(*model_, cfg_.init_checkpoint);
    model_->set_weight_scale_trainable(cfg_.weight_scale_trainable());

    iter_ = std::make_unique<BatchIterator>(data.train, cfg_.batch_size, cfg_.seed * 0x9E3779B97F4A7C15ULL + 1, true,
                                            cfg_.use_augment(), true);
    if (iter_->batches_per_epoch() == 0) {
      throw DataError("batch size " + std::to_string(cfg_.batch_size) + " exceeds training set size " +
                      std::to_string(data.train.size()));
    }
    total_steps_ = cfg_.steps > 0 ? cfg_.steps : cfg_.epochs * static_cast<long>(iter_->batches_per_epoch());

    lr_sched_ = Schedule{cfg_.lr_schedule, cfg_.learning_rate(), total_steps_, cfg_.lr_period, cfg_.lr_divisor};
    lr_sched_.validate();
    const int tr_bits = is_quantized_bits(cfg_.bits_w) ? cfg_.bits_w : 1;
    tr_sched_ = Schedule{cfg_.tr_schedule, initial_target_tr(cfg_.lambda, tr_bits), total_steps_, cfg_.tr_period,
                         cfg_.tr_divisor};
    tr_sched_.validate();

    build_groups();
    auto& q = model_->quantized_layers();
    trackers_.resize(q.size());
    running_.assign(q.size(), 0.0);
    for (std::size_t i = 0; i < q.size(); ++i) {
      const auto d = q[i].latent.data();
      trackers_[i].reset<T>(std::span<const T>(d.data(), d.size()), q[i].weight_quantizer->current());
      TrControllerState st;
      st.talr = cfg_.learning_rate();
      st.gain = cfg_.talr_gain();
      st.rule = cfg_.tr_rule;
      st.momentum_m = cfg_.tr_rule_momentum;
      st.layer_id = q[i].name;
      controllers_.emplace_back(st, cfg_.tr_momentum);
    }
  }

  Model<T>& model() { return *model_; }
  Optimizer<T>& optimizer() { return *opt_; }
  long total_steps() const { return total_steps_; }
  const std::vector<TrController>& controllers() const { return controllers_; }

  bool tracking() const {
    return !model_->quantized_layers().empty() && (cfg_.tr_enabled || cfg_.metrics_level == MetricsLevel::full);
  }

  RunMetrics run() {
    using clock = std::chrono::steady_clock;
    const auto t_start = clock::now();
    RunMetrics m;
    for (const auto& q : model_->quantized_layers()) m.layers.push_back(q.name);
    auto& qls = model_->quantized_layers();
    const std::size_t L = qls.size();

    std::vector<std::vector<T>> before(L);
    std::vector<QuantizerSpec> spec_before(L);
    std::vector<std::vector<std::int32_t>> codes_before(L);
    Batch batch;
    long epoch = 1;
    double epoch_loss = 0.0;
    long epoch_batches = 0;
    double train_seconds = 0.0;

    for (long t = 1; t <= total_steps_; ++t) {
      if (!iter_->next(batch)) {
        finish_epoch(m, epoch, t - 1, epoch_loss, epoch_batches, clock::now() - t_start);
        ++epoch;
        epoch_loss = 0.0;
        epoch_batches = 0;
        iter_->next(batch);
      }
      const auto t0 = clock::now();
      const double mu = lr_sched_.value(t - 1);
      const double R = tr_sched_.value(t);

      Tape<T> tape;
      Tensor<T> x(batch.shape, std::vector<T>(batch.images.begin(), batch.images.end()));
      Tensor<T> loss;
      double loss_v = kNotLogged;
      bool quant_error = false;
      try {
        Tensor<T> logits = model_->forward(tape, x, true);
        loss = softmax_cross_entropy(tape, logits, std::span<const std::int32_t>(batch.labels));
        loss_v = static_cast<double>(loss.item());
      } catch (const QuantizerError&) {
        // NaN weights or a scale pushed to <= 0 by a runaway update
        loss_v = kNotLogged;
        quant_error = true;
      }
      if (!std::isfinite(loss_v)) {
        m.diverged = true;
        m.diverged_at = t;
        m.diverged_reason = quant_error ? "quantizer input or scale invalid" : "non-finite loss";
        train_seconds += std::chrono::duration<double>(clock::now() - t0).count();
        break;
      }
      opt_->zero_grad();
      tape.backward(loss);

      const bool oracle_step = tracking() && cfg_.oracle_every > 0 && (t == 1 || t % cfg_.oracle_every == 0);
      const bool full = tracking() && cfg_.metrics_level == MetricsLevel::full;
      if (full || oracle_step) {
        for (std::size_t i = 0; i < L; ++i) {
          auto d = qls[i].latent.data();
          before[i].assign(d.begin(), d.end());
          spec_before[i] = qls[i].weight_quantizer->current();
          auto c = trackers_[i].codes();
          codes_before[i].assign(c.begin(), c.end());
        }
      }

      for (std::size_t i = 0; i < L; ++i) {
        if (talr_group_[i] == kNoGroup) continue;
        opt_->set_talr(talr_group_[i], cfg_.tr_pin_to_lr ? mu : controllers_[i].talr());
      }
      opt_->step(mu);
      audit_routing(m, t);
      if (!scales_valid()) {
        m.diverged = true;
        m.diverged_at = t;
        m.diverged_reason = "quantizer scale no longer positive and finite";
        train_seconds += std::chrono::duration<double>(clock::now() - t0).count();
        break;
      }

      if (!tracking()) {
        m.rows.push_back(StepRow{t, "-", kNotLogged, kNotLogged, kNotLogged, mu, kNotLogged, kNotLogged, kNotLogged,
                                 loss_v});
      }
      for (std::size_t i = 0; i < L && tracking(); ++i) {
        const QuantizerSpec spec = qls[i].weight_quantizer->current();
        auto d = qls[i].latent.data();
        const std::span<const T> latent(d.data(), d.size());
        const double k = trackers_[i].observe<T>(latent, spec);
        double U = mu;
        if (cfg_.tr_enabled) {
          // pinned runs keep the controller going but ignore its output
          const double u = controllers_[i].observe(k, R);
          if (!cfg_.tr_pin_to_lr) U = u;
          running_[i] = controllers_[i].running_tr();
        } else {
          running_[i] = update_running_tr(running_[i], k, cfg_.tr_momentum);
        }
        StepRow row{t, qls[i].name, k, running_[i], R, U, kNotLogged, kNotLogged, kNotLogged, loss_v};
        if (full) {
          row.ess_latent = avg_effective_step_size<T>(std::span<const T>(before[i]), latent);
          const auto codes = trackers_[i].codes();
          double acc = 0.0;
          for (std::size_t j = 0; j < codes.size(); ++j) acc += std::abs(codes[j] - codes_before[i][j]);
          row.ess_quant = acc / spec.gamma / static_cast<double>(codes.size());
          const auto wn = normalized<T>(latent, spec);
          row.dist_tp = mean_distance_to_transition_points<T>(std::span<const T>(wn), spec);
        }
        if (oracle_step) check_transitions(m, t, i, before[i], latent, spec_before[i], spec);
        m.rows.push_back(std::move(row));
      }
      epoch_loss += loss_v;
      ++epoch_batches;
      m.steps = t;
      train_seconds += std::chrono::duration<double>(clock::now() - t0).count();
    }
    if (!m.diverged && epoch_batches > 0) {
      finish_epoch(m, epoch, m.steps, epoch_loss, epoch_batches, clock::now() - t_start);
    }
    for (const auto& c : controllers_) m.skipped_updates.push_back(c.state().skipped_updates);
    m.train_seconds = train_seconds;
    m.wall_seconds = std::chrono::duration<double>(clock::now() - t_start).count();
    return m;
  }

  double evaluate() {
    const Dataset& d = data_->test;
    const std::size_t bs = 256;
    std::size_t correct = 0;
    for (std::size_t n0 = 0; n0 < d.size(); n0 += bs) {
      const std::size_t cnt = std::min(bs, d.size() - n0);
      const std::size_t sn = d.sample_numel();
      std::vector<T> buf(d.images.begin() + static_cast<long>(n0 * sn),
                         d.images.begin() + static_cast<long>((n0 + cnt) * sn));
      Tensor<T> x(Shape{cnt, d.channels, d.height, d.width}, std::move(buf));
      auto tape = Tape<T>::inference();
      auto logits = model_->forward(tape, x, false);
      correct += count_correct(logits, std::span<const std::int32_t>(d.labels.data() + n0, cnt));
    }
    return d.size() ? static_cast<double>(correct) / static_cast<double>(d.size()) : 0.0;
  }

  Checkpoint checkpoint() {
    Checkpoint ck = snapshot_model(*model_);
    auto& q = model_->quantized_layers();
    for (std::size_t i = 0; i < q.size(); ++i) {
      StoredController sc;
      sc.state = controllers_[i].state();
      sc.tr_momentum = controllers_[i].tr_momentum();
      sc.running_tr = running_[i];
      ck.controllers[q[i].name] = sc;
    }
    return ck;
  }

 private:
  static constexpr std::size_t kNoGroup = static_cast<std::size_t>(-1);

  void build_groups() {
    opt_ = std::make_unique<Optimizer<T>>(cfg_.optimizer);
    auto& q = model_->quantized_layers();
    talr_group_.assign(q.size(), kNoGroup);
    std::set<const void*> talr_params;
    if (cfg_.tr_enabled) {
      for (std::size_t i = 0; i < q.size(); ++i) {
        ParamGroup<T> g;
        g.name = "talr:" + q[i].name;
        g.mode = UpdateMode::talr;
        g.weight_decay = cfg_.weight_decay;
        g.talr = cfg_.learning_rate();
        g.params.push_back(q[i].latent);
        talr_group_[i] = opt_->add_group(std::move(g));
        talr_params.insert(q[i].latent.id());
        talr_ids_.insert(q[i].latent.id());
      }
    }
    ParamGroup<T> weights{"weights", {}, UpdateMode::plain_lr, 1.0, cfg_.weight_decay, 0.0};
    ParamGroup<T> other{"other", {}, UpdateMode::plain_lr, 1.0, 0.0, 0.0};
    ParamGroup<T> scales{"scales", {}, UpdateMode::plain_lr, cfg_.act_scale_lr_mult, 0.0, 0.0};
    for (const auto& p : model_->parameters()) {
      if (talr_params.contains(p.tensor.id())) continue;
      switch (p.kind) {
        case ParamKind::quantized_weight:
        case ParamKind::weight: weights.params.push_back(p.tensor); break;
        case ParamKind::bias:
        case ParamKind::batchnorm: other.params.push_back(p.tensor); break;
        case ParamKind::act_scale: scales.params.push_back(p.tensor); break;
        case ParamKind::weight_scale:
          if (p.tensor.requires_grad()) scales.params.push_back(p.tensor);
          break;
      }
    }
    for (auto* g : {&weights, &other, &scales})
      if (!g->params.empty()) opt_->add_group(std::move(*g));
  }

  // TALR updates only touch quantized latent weights, and with TR enabled
  // every quantized latent weight receives one.
  void audit_routing(RunMetrics& m, long t) {
    for (const auto& u : opt_->last_updates()) {
      const bool is_latent = talr_ids_.contains(u.param);
      if (u.mode == UpdateMode::talr && !is_latent) {
        m.routing_violations.push_back("step " + std::to_string(t) + ": TALR applied in group " + u.group +
                                       " to a non-quantized parameter");
      }
      if (is_latent && u.mode != UpdateMode::talr) {
        m.routing_violations.push_back("step " + std::to_string(t) + ": quantized weight in group " + u.group +
                                       " updated with the plain LR");
      }
    }
  }

  bool scales_valid() const {
    auto ok = [](const Tensor<T>& s) {
      const double v = static_cast<double>(s.item());
      return std::isfinite(v) && v > 0.0;
    };
    for (const auto& q : model_->quantized_layers())
      if (!ok(q.weight_quantizer->scale)) return false;
    for (const auto* a : model_->activation_quantizers())
      if (a->initialized && !ok(a->scale)) return false;
    return true;
  }

  void check_transitions(RunMetrics& m, long t, std::size_t i, const std::vector<T>& before,
                         std::span<const T> after, const QuantizerSpec& sb, const QuantizerSpec& sa) {
    auto levels = [](const QuantizerSpec& s) {
      oracle::Levels l{s.alpha, s.beta, s.gamma, s.scale};
      l.binary = s.discretization == Discretization::signum;
      l.binary_weight = s.role == QuantRole::weight;
      return l;
    };
    const std::size_t expect =
        oracle::recount_transitions<T>(std::span<const T>(before), after, levels(sb), levels(sa));
    ++m.oracle_checks;
    const std::size_t got = trackers_[i].last_changed();
    if (got != expect) {
      m.oracle_mismatches.push_back({t, model_->quantized_layers()[i].name, got, expect});
    }
  }

  void finish_epoch(RunMetrics& m, long epoch, long step, double loss_sum, long batches,
                    std::chrono::steady_clock::duration elapsed) {
    if (cfg_.eval_every_epochs > 0 && (epoch % cfg_.eval_every_epochs == 0 || step == total_steps_)) {
      EpochRow r;
      r.epoch = epoch;
      r.step = step;
      r.train_loss = batches ? loss_sum / static_cast<double>(batches) : kNotLogged;
      r.test_acc = evaluate();
      r.seconds = std::chrono::duration<double>(elapsed).count();
      m.final_test_acc = r.test_acc;
      m.epochs.push_back(r);
    }
  }

  TrainConfig cfg_;
  const DataBundle* data_;
  std::unique_ptr<Model<T>> model_;
  std::unique_ptr<Optimizer<T>> opt_;
  std::unique_ptr<BatchIterator> iter_;
  long total_steps_ = 0;
  Schedule lr_sched_, tr_sched_;
  std::vector<TransitionTracker> trackers_;
  std::vector<TrController> controllers_;
  std::vector<double> running_;
  std::vector<std::size_t> talr_group_;
  std::set<const void*> talr_ids_;
};

inline RunMetrics run_training(const TrainConfig& cfg, const DataBundle& data) {
  Trainer<float> tr(cfg, data);
  return tr.run();
}

inline RunMetrics run_training(const TrainConfig& cfg) {
  const DataBundle data = load_data(cfg);
  return run_training(cfg, data);
}

struct OverheadResult {
  double plain_seconds = 0.0;
  double tr_seconds = 0.0;
  double ratio = 0.0;
  std::vector<double> plain_runs, tr_runs;
};

inline double median(std::vector<double> v) {
  if (v.empty()) return kNotLogged;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// What the second arm of measure_overhead runs: plain again (a noise
// control), TR scheduling, or TR pinned to the LR schedule (full TR
// bookkeeping with numerics identical to plain).
enum class OverheadArm { plain, tr, pinned };

// Medians of training time over interleaved runs of the same config, plain
// against `arm`. Metrics are kept minimal in both.
inline OverheadResult measure_overhead(TrainConfig cfg, const DataBundle& data, int runs = 3,
                                       OverheadArm arm = OverheadArm::tr) {
  if (runs < 3) throw std::invalid_argument("measure_overhead: need at least 3 runs per arm");
  cfg.metrics_level = MetricsLevel::minimal;
  cfg.oracle_every = 0;
  cfg.eval_every_epochs = 0;
  TrainConfig plain = cfg, tr = cfg;
  plain.tr_enabled = false;
  plain.tr_pin_to_lr = false;
  tr.tr_enabled = arm != OverheadArm::plain;
  tr.tr_pin_to_lr = arm == OverheadArm::pinned;
  OverheadResult r;
  for (int i = 0; i < runs; ++i) {
    r.plain_runs.push_back(run_training(plain, data).train_seconds);
    r.tr_runs.push_back(run_training(tr, data).train_seconds);
  }
  r.plain_seconds = median(r.plain_runs);
  r.tr_seconds = median(r.tr_runs);
  r.ratio = r.tr_seconds / r.plain_seconds;
  return r;
}

}  // namespace qat
