#pragma once

// Training configuration and its text format.
//
// Grammar (one entry per line):
//   line    := blank | comment | section | entry
//   comment := '#' ...
//   section := '[' name ']'        prefixes following keys with "name."
//   entry   := key '=' value       value may be quoted; trailing '# ...' ignored
// Keys are dotted (tr.lambda, lr.schedule, ...). Unknown keys are rejected.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "qat/model.hpp"
#include "qat/optim.hpp"
#include "qat/scheduler.hpp"

namespace qat {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& msg) : std::runtime_error(msg), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

enum class DataKind { synthetic, mnist, cifar10 };

inline DataKind parse_data_kind(std::string_view s) {
  if (s == "synthetic") return DataKind::synthetic;
  if (s == "mnist") return DataKind::mnist;
  if (s == "cifar10") return DataKind::cifar10;
  throw std::invalid_argument("unknown data kind '" + std::string(s) + "'");
}

inline const char* to_string(DataKind k) {
  switch (k) {
    case DataKind::synthetic: return "synthetic";
    case DataKind::mnist: return "mnist";
    case DataKind::cifar10: return "cifar10";
  }
  return "?";
}

enum class MetricsLevel { full, minimal };

struct TrainConfig {
  ModelKind model = ModelKind::cnn_small;
  double width_mult = 1.0;
  int bits_w = 2;
  int bits_a = 2;

  OptimizerKind optimizer = OptimizerKind::sgd;
  std::optional<double> lr;  // unset: 0.1 for sgd, 1e-3 for adam/adamw
  ScheduleKind lr_schedule = ScheduleKind::cosine;
  long lr_period = 1000;
  double lr_divisor = 10.0;
  double weight_decay = 1e-4;
  double act_scale_lr_mult = 0.1;  // scale parameters train at a tenth of the LR

  bool tr_enabled = false;
  double lambda = 5e-3;
  double tr_momentum = 0.99;
  TalrRule tr_rule = TalrRule::additive;
  double tr_rule_momentum = 0.99;
  std::optional<double> tr_gain;  // unset: equals lr
  ScheduleKind tr_schedule = ScheduleKind::cosine;
  long tr_period = 1000;
  double tr_divisor = 5.0;
  bool tr_pin_to_lr = false;  // controller output ignored, U = scheduled LR

  std::string train_weight_scale = "auto";  // auto | true | false

  long epochs = 1;
  long steps = 0;  // > 0 overrides epochs
  std::size_t batch_size = 64;
  std::uint64_t seed = 1;

  DataKind data = DataKind::synthetic;
  std::string data_path;
  std::size_t train_subset = 0;  // 0 = all
  std::size_t test_subset = 0;
  int synth_classes = 10;
  std::size_t synth_per_class = 200;
  std::size_t synth_test_per_class = 50;
  std::size_t synth_dim = 64;
  double synth_noise = 0.1;
  std::optional<bool> augment;  // unset: on for cifar10 only

  MetricsLevel metrics_level = MetricsLevel::full;
  long oracle_every = 50;
  long eval_every_epochs = 1;
  std::string init_checkpoint;

  double learning_rate() const {
    if (lr) return *lr;
    return optimizer == OptimizerKind::sgd ? 0.1 : 1e-3;
  }
  double talr_gain() const { return tr_gain ? *tr_gain : learning_rate(); }
  bool weight_scale_trainable() const {
    if (train_weight_scale == "auto") return !tr_enabled;
    return train_weight_scale == "true";
  }
  bool use_augment() const { return augment ? *augment : data == DataKind::cifar10; }

  void validate() const {
    auto bad = [](const std::string& k, const std::string& m) { throw ConfigError(k, k + ": " + m); };
    auto bits_ok = [](int b) { return (b >= 1 && b <= 8) || b == 32; };
    if (!bits_ok(bits_w)) bad("bits.w", "must be in 1..8 or 32");
    if (!bits_ok(bits_a)) bad("bits.a", "must be in 1..8 or 32");
    if (!(learning_rate() > 0.0)) bad("lr", "must be > 0");
    if (!(weight_decay >= 0.0)) bad("weight_decay", "must be >= 0");
    if (!(lambda > 0.0)) bad("tr.lambda", "must be > 0");
    if (!(tr_momentum >= 0.0 && tr_momentum < 1.0)) bad("tr.momentum", "must be in [0,1)");
    if (!(tr_rule_momentum >= 0.0 && tr_rule_momentum < 1.0)) bad("tr.rule_momentum", "must be in [0,1)");
    if (!(talr_gain() > 0.0)) bad("tr.gain", "must be > 0");
    if (train_weight_scale != "auto" && train_weight_scale != "true" && train_weight_scale != "false") {
      bad("quant.train_weight_scale", "must be auto, true or false");
    }
    if (epochs < 1 && steps < 1) bad("epochs", "need epochs >= 1 or steps >= 1");
    if (batch_size < 1) bad("batch_size", "must be >= 1");
    if (!(width_mult > 0.0)) bad("model.width", "must be > 0");
    if (data != DataKind::synthetic && data_path.empty()) bad("data.path", "required for " + std::string(to_string(data)));
    if (data == DataKind::synthetic && (synth_per_class < 1 || synth_classes < 2 || synth_dim < 1)) {
      bad("data.synthetic", "needs classes >= 2, per_class >= 1, dim >= 1");
    }
    if (oracle_every < 0) bad("metrics.oracle_every", "must be >= 0");
    if (lr_period < 1) bad("lr.period", "must be >= 1");
    if (tr_period < 1) bad("tr.period", "must be >= 1");
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename V>
V parse_number(const std::string& key, const std::string& v) {
  V out{};
  const char* first = v.data();
  const char* last = v.data() + v.size();
  if (!v.empty() && v[0] == '+') ++first;
  auto [p, ec] = std::from_chars(first, last, out);
  if (ec != std::errc{} || p != last) throw ConfigError(key, key + ": cannot parse '" + v + "' as a number");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key, key + ": expected a boolean, got '" + v + "'");
}

template <typename F>
auto enum_value(const std::string& key, const std::string& v, F parse) {
  try {
    return parse(v);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(key, key + ": " + e.what());
  }
}

using Setter = std::function<void(TrainConfig&, const std::string& key, const std::string& v)>;

inline const std::map<std::string, Setter>& config_setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    auto dbl = [](double TrainConfig::*m) {
      return [m](TrainConfig& c, const std::string& k, const std::string& v) { c.*m = parse_number<double>(k, v); };
    };
    auto lng = [](long TrainConfig::*m) {
      return [m](TrainConfig& c, const std::string& k, const std::string& v) { c.*m = parse_number<long>(k, v); };
    };
    auto sz = [](std::size_t TrainConfig::*m) {
      return [m](TrainConfig& c, const std::string& k, const std::string& v) { c.*m = parse_number<std::size_t>(k, v); };
    };
    auto int_ = [](int TrainConfig::*m) {
      return [m](TrainConfig& c, const std::string& k, const std::string& v) { c.*m = parse_number<int>(k, v); };
    };
    auto str = [](std::string TrainConfig::*m) {
      return [m](TrainConfig& c, const std::string&, const std::string& v) { c.*m = v; };
    };
    auto flag = [](bool TrainConfig::*m) {
      return [m](TrainConfig& c, const std::string& k, const std::string& v) { c.*m = parse_bool(k, v); };
    };
    t["model"] = [](TrainConfig& c, const std::string& k, const std::string& v) { c.model = enum_value(k, v, parse_model_kind); };
    t["model.width"] = dbl(&TrainConfig::width_mult);
    t["bits.w"] = int_(&TrainConfig::bits_w);
    t["bits.a"] = int_(&TrainConfig::bits_a);
    t["optimizer"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      c.optimizer = enum_value(k, v, parse_optimizer_kind);
    };
    t["lr"] = [](TrainConfig& c, const std::string& k, const std::string& v) { c.lr = parse_number<double>(k, v); };
    t["lr.schedule"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      c.lr_schedule = enum_value(k, v, parse_schedule_kind);
    };
    t["lr.period"] = lng(&TrainConfig::lr_period);
    t["lr.divisor"] = dbl(&TrainConfig::lr_divisor);
    t["lr.act_scale_mult"] = dbl(&TrainConfig::act_scale_lr_mult);
    t["weight_decay"] = dbl(&TrainConfig::weight_decay);
    t["tr.enabled"] = flag(&TrainConfig::tr_enabled);
    t["tr.lambda"] = dbl(&TrainConfig::lambda);
    t["tr.momentum"] = dbl(&TrainConfig::tr_momentum);
    t["tr.rule"] = [](TrainConfig& c, const std::string& k, const std::string& v) { c.tr_rule = enum_value(k, v, parse_talr_rule); };
    t["tr.rule_momentum"] = dbl(&TrainConfig::tr_rule_momentum);
    t["tr.gain"] = [](TrainConfig& c, const std::string& k, const std::string& v) { c.tr_gain = parse_number<double>(k, v); };
    t["tr.schedule"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      c.tr_schedule = enum_value(k, v, parse_schedule_kind);
    };
    t["tr.period"] = lng(&TrainConfig::tr_period);
    t["tr.divisor"] = dbl(&TrainConfig::tr_divisor);
    t["tr.pin_to_lr"] = flag(&TrainConfig::tr_pin_to_lr);
    t["quant.train_weight_scale"] = str(&TrainConfig::train_weight_scale);
    t["epochs"] = lng(&TrainConfig::epochs);
    t["steps"] = lng(&TrainConfig::steps);
    t["batch_size"] = sz(&TrainConfig::batch_size);
    t["seed"] = [](TrainConfig& c, const std::string& k, const std::string& v) { c.seed = parse_number<std::uint64_t>(k, v); };
    t["data.kind"] = [](TrainConfig& c, const std::string& k, const std::string& v) { c.data = enum_value(k, v, parse_data_kind); };
    t["data.path"] = str(&TrainConfig::data_path);
    t["data.train_subset"] = sz(&TrainConfig::train_subset);
    t["data.test_subset"] = sz(&TrainConfig::test_subset);
    t["data.augment"] = [](TrainConfig& c, const std::string& k, const std::string& v) { c.augment = parse_bool(k, v); };
    t["data.synthetic.classes"] = int_(&TrainConfig::synth_classes);
    t["data.synthetic.per_class"] = sz(&TrainConfig::synth_per_class);
    t["data.synthetic.test_per_class"] = sz(&TrainConfig::synth_test_per_class);
    t["data.synthetic.dim"] = sz(&TrainConfig::synth_dim);
    t["data.synthetic.noise"] = dbl(&TrainConfig::synth_noise);
    t["metrics.level"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      if (v == "full") c.metrics_level = MetricsLevel::full;
      else if (v == "minimal") c.metrics_level = MetricsLevel::minimal;
      else throw ConfigError(k, k + ": expected full or minimal, got '" + v + "'");
    };
    t["metrics.oracle_every"] = lng(&TrainConfig::oracle_every);
    t["metrics.eval_every"] = lng(&TrainConfig::eval_every_epochs);
    t["init.checkpoint"] = str(&TrainConfig::init_checkpoint);
    return t;
  }();
  return table;
}

}  // namespace detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : detail::config_setters()) keys.push_back(k);
  return keys;
}

// Applies one key; throws ConfigError naming the key when it is unknown or
// its value does not parse.
inline void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value) {
  const auto& table = detail::config_setters();
  auto it = table.find(key);
  if (it == table.end()) throw ConfigError(key, "unknown config key '" + key + "'");
  it->second(cfg, key, value);
}

inline TrainConfig parse_config(std::string_view text, const std::string& source = "<string>") {
  TrainConfig cfg;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = detail::trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("", source + ":" + std::to_string(lineno) + ": malformed section header");
      section = detail::trim(std::string_view(line).substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(line, source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    std::string key = detail::trim(std::string_view(line).substr(0, eq));
    std::string value = detail::trim(std::string_view(line).substr(eq + 1));
    if (!value.empty() && (value.front() == '"' || value.front() == '\'')) {
      const char q = value.front();
      const auto close = value.find(q, 1);
      if (close == std::string::npos) throw ConfigError(key, source + ":" + std::to_string(lineno) + ": unterminated quote");
      value = value.substr(1, close - 1);
    } else if (const auto hash = value.find('#'); hash != std::string::npos) {
      value = detail::trim(std::string_view(value).substr(0, hash));
    }
    if (!section.empty()) key = section + "." + key;
    set_config_value(cfg, key, value);
  }
  cfg.validate();
  return cfg;
}

inline TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot read config file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

namespace detail {
inline std::string fmt_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}
}  // namespace detail

// Every key written explicitly; parse_config(to_text(c)) reproduces c.
inline std::string to_text(const TrainConfig& c) {
  using detail::fmt_double;
  std::ostringstream o;
  auto b = [](bool v) { return v ? "true" : "false"; };
  o << "model = " << to_string(c.model) << "\n";
  o << "model.width = " << fmt_double(c.width_mult) << "\n";
  o << "bits.w = " << c.bits_w << "\nbits.a = " << c.bits_a << "\n";
  o << "optimizer = " << to_string(c.optimizer) << "\n";
  o << "lr = " << fmt_double(c.learning_rate()) << "\n";
  o << "lr.schedule = " << to_string(c.lr_schedule) << "\n";
  o << "lr.period = " << c.lr_period << "\nlr.divisor = " << fmt_double(c.lr_divisor) << "\n";
  o << "lr.act_scale_mult = " << fmt_double(c.act_scale_lr_mult) << "\n";
  o << "weight_decay = " << fmt_double(c.weight_decay) << "\n";
  o << "tr.enabled = " << b(c.tr_enabled) << "\n";
  o << "tr.lambda = " << fmt_double(c.lambda) << "\n";
  o << "tr.momentum = " << fmt_double(c.tr_momentum) << "\n";
  o << "tr.rule = " << to_string(c.tr_rule) << "\n";
  o << "tr.rule_momentum = " << fmt_double(c.tr_rule_momentum) << "\n";
  o << "tr.gain = " << fmt_double(c.talr_gain()) << "\n";
  o << "tr.schedule = " << to_string(c.tr_schedule) << "\n";
  o << "tr.period = " << c.tr_period << "\ntr.divisor = " << fmt_double(c.tr_divisor) << "\n";
  o << "tr.pin_to_lr = " << b(c.tr_pin_to_lr) << "\n";
  o << "quant.train_weight_scale = " << c.train_weight_scale << "\n";
  o << "epochs = " << c.epochs << "\nsteps = " << c.steps << "\n";
  o << "batch_size = " << c.batch_size << "\nseed = " << c.seed << "\n";
  o << "data.kind = " << to_string(c.data) << "\n";
  o << "data.path = \"" << c.data_path << "\"\n";
  o << "data.train_subset = " << c.train_subset << "\ndata.test_subset = " << c.test_subset << "\n";
  o << "data.augment = " << b(c.use_augment()) << "\n";
  o << "data.synthetic.classes = " << c.synth_classes << "\n";
  o << "data.synthetic.per_class = " << c.synth_per_class << "\n";
  o << "data.synthetic.test_per_class = " << c.synth_test_per_class << "\n";
  o << "data.synthetic.dim = " << c.synth_dim << "\n";
  o << "data.synthetic.noise = " << fmt_double(c.synth_noise) << "\n";
  o << "metrics.level = " << (c.metrics_level == MetricsLevel::full ? "full" : "minimal") << "\n";
  o << "metrics.oracle_every = " << c.oracle_every << "\n";
  o << "metrics.eval_every = " << c.eval_every_epochs << "\n";
  o << "init.checkpoint = \"" << c.init_checkpoint << "\"\n";
  return o.str();
}

}  // namespace qat
