// qat: train / sweep / export / oracle
//
// Exit codes: 0 ok, 1 oracle or check failure, 2 config / data / usage error,
// 3 divergence.

#include <fcntl.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "qat/qat.hpp"

extern char** environ;

namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0, kCheckFailed = 1, kConfigError = 2, kDiverged = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void apply_overrides(qat::TrainConfig& cfg, const std::vector<std::string>& sets) {
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw qat::ConfigError(s, "--set expects key=value, got '" + s + "'");
    qat::set_config_value(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  cfg.validate();
}

// A directory counts as taken once it holds anything.
bool occupied(const fs::path& dir) { return fs::exists(dir) && !fs::is_empty(dir); }

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write '" + p.string() + "'");
  f << text;
}

int cmd_train(const std::string& config, const fs::path& out, const std::vector<std::string>& sets,
              const std::optional<std::uint64_t>& seed, bool force) {
  qat::TrainConfig cfg = qat::load_config(config);
  apply_overrides(cfg, sets);
  if (seed) cfg.seed = *seed;
  if (occupied(out) && !force) throw UsageError("output directory '" + out.string() + "' is not empty (use --force)");
  const auto data = qat::load_data(cfg);

  qat::Trainer<float> trainer(cfg, data);
  std::cerr << "training " << qat::to_string(cfg.model) << ", " << trainer.total_steps() << " steps, TR "
            << (cfg.tr_enabled ? "on" : "off") << "\n";
  const auto m = trainer.run();

  fs::create_directories(out);
  {
    std::ofstream f(out / "steps.csv", std::ios::binary);
    qat::write_steps_csv(f, m.rows);
  }
  {
    std::ofstream f(out / "epochs.csv", std::ios::binary);
    qat::write_epochs_csv(f, m.epochs);
  }
  write_file(out / "config.txt", qat::to_text(cfg));
  if (!m.diverged) qat::save_checkpoint(trainer.checkpoint(), out / "checkpoint.bin");

  nlohmann::json res;
  res["final_test_acc"] = std::isnan(m.final_test_acc) ? nlohmann::json(nullptr) : nlohmann::json(m.final_test_acc);
  res["diverged"] = m.diverged;
  res["diverged_at"] = m.diverged_at;
  if (m.diverged) res["diverged_reason"] = m.diverged_reason;
  res["steps"] = m.steps;
  res["train_seconds"] = m.train_seconds;
  res["wall_seconds"] = m.wall_seconds;
  res["oracle_checks"] = m.oracle_checks;
  res["oracle_mismatches"] = m.oracle_mismatches.size();
  res["routing_violations"] = m.routing_violations.size();
  res["skipped_updates"] = m.skipped_updates;
  write_file(out / "result.json", res.dump(2) + "\n");

  if (m.diverged) {
    std::cerr << "error: training diverged at step " << m.diverged_at << ": " << m.diverged_reason << "\n";
    return kDiverged;
  }
  std::printf("final test accuracy: %.4f\n", m.final_test_acc);
  int rc = kOk;
  for (const auto& mm : m.oracle_mismatches) {
    std::cerr << "oracle mismatch: step " << mm.step << " layer " << mm.layer << ": harness " << mm.harness
              << " transitions, recount " << mm.oracle << "\n";
    rc = kCheckFailed;
  }
  for (const auto& v : m.routing_violations) {
    std::cerr << "routing violation: " << v << "\n";
    rc = kCheckFailed;
  }
  return rc;
}

std::string self_exe(const char* argv0) {
  std::error_code ec;
  auto p = fs::read_symlink("/proc/self/exe", ec);
  return ec ? std::string(argv0) : p.string();
}

pid_t spawn(const std::string& exe, const std::vector<std::string>& args, const fs::path& log) {
  std::vector<char*> argv;
  argv.push_back(const_cast<char*>(exe.c_str()));
  for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);
  posix_spawn_file_actions_t fa;
  posix_spawn_file_actions_init(&fa);
  posix_spawn_file_actions_addopen(&fa, STDOUT_FILENO, log.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  posix_spawn_file_actions_adddup2(&fa, STDOUT_FILENO, STDERR_FILENO);
  pid_t pid = 0;
  const int err = posix_spawn(&pid, exe.c_str(), &fa, nullptr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&fa);
  if (err != 0) throw std::runtime_error("cannot start '" + exe + "': " + std::strerror(err));
  return pid;
}

std::vector<double> parse_lambdas(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size() || !(v > 0.0)) throw qat::ConfigError("tr.lambda", "bad lambda '" + tok + "'");
    out.push_back(v);
  }
  if (out.empty()) throw qat::ConfigError("tr.lambda", "empty lambda grid");
  return out;
}

std::string lambda_tag(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

int cmd_sweep(const char* argv0, const std::string& config, const fs::path& out, const std::string& lambdas,
              const std::vector<std::string>& sets, int parallel, bool force) {
  if (parallel < 1) throw UsageError("--parallel must be >= 1");
  // Validate once up front so a bad key fails before anything is spawned.
  qat::TrainConfig cfg = qat::load_config(config);
  apply_overrides(cfg, sets);
  const auto grid = parse_lambdas(lambdas);
  if (occupied(out) && !force) throw UsageError("output directory '" + out.string() + "' is not empty (use --force)");
  fs::create_directories(out);

  const std::string exe = self_exe(argv0);
  struct Job {
    double lambda;
    fs::path dir;
    pid_t pid = 0;
    int status = -1;
  };
  std::vector<Job> jobs;
  for (double l : grid) jobs.push_back({l, out / ("lambda_" + lambda_tag(l))});

  std::size_t next = 0, running = 0, done = 0;
  while (done < jobs.size()) {
    while (running < static_cast<std::size_t>(parallel) && next < jobs.size()) {
      auto& j = jobs[next++];
      fs::create_directories(j.dir);
      std::vector<std::string> args{"train", "--config", config, "--out", j.dir.string(), "--force",
                                    "--set", "tr.enabled=true", "--set", "tr.lambda=" + lambda_tag(j.lambda)};
      for (const auto& s : sets) args.insert(args.end(), {"--set", s});
      j.pid = spawn(exe, args, j.dir / "log.txt");
      std::cerr << "started lambda=" << lambda_tag(j.lambda) << "\n";
      ++running;
    }
    int st = 0;
    const pid_t pid = waitpid(-1, &st, 0);
    if (pid < 0) throw std::runtime_error("waitpid failed");
    for (auto& j : jobs)
      if (j.pid == pid) {
        j.status = WIFEXITED(st) ? WEXITSTATUS(st) : 128;
        std::cerr << "finished lambda=" << lambda_tag(j.lambda) << " exit " << j.status << "\n";
      }
    --running;
    ++done;
  }

  std::ostringstream csv;
  csv << "lambda,final_test_acc,diverged,exit_code\n";
  int rc = kOk;
  for (const auto& j : jobs) {
    std::string acc;
    bool diverged = j.status == kDiverged;
    std::ifstream f(j.dir / "result.json");
    if (f) {
      const auto res = nlohmann::json::parse(f, nullptr, false);
      if (!res.is_discarded() && res["final_test_acc"].is_number()) {
        std::ostringstream a;
        qat::detail::put_number(a, res["final_test_acc"].get<double>());
        acc = a.str();
      }
    }
    csv << lambda_tag(j.lambda) << ',' << acc << ',' << (diverged ? 1 : 0) << ',' << j.status << '\n';
    if (j.status != kOk && j.status != kDiverged) rc = kCheckFailed;
  }
  write_file(out / "summary.csv", csv.str());
  std::cout << csv.str();
  return rc;
}

int cmd_export(const fs::path& run, const std::optional<fs::path>& out, double smooth, long every) {
  const fs::path csv = fs::is_directory(run) ? run / "steps.csv" : run;
  const fs::path dir = out ? *out : (fs::is_directory(run) ? run : run.parent_path()) / "export";
  const auto files = qat::export_run(csv, dir, {smooth, every});
  for (const auto& f : files) std::cout << f.string() << "\n";
  return kOk;
}

int cmd_oracle(const std::string& filter, const std::string& fault, const std::optional<fs::path>& report) {
  qat::oracle::SuiteOptions opt;
  opt.filter = filter;
  opt.inject_fault = fault;
  const auto results = qat::oracle::run_suite(opt);
  if (results.empty()) throw UsageError("no oracle checks match filter '" + filter + "'");
  const auto j = qat::oracle::to_json(results);
  const std::string text = j.dump(2) + "\n";
  if (report) write_file(*report, text);
  std::cout << text;
  for (const auto& r : results)
    if (!r.passed) std::cerr << "FAIL " << r.group << "/" << r.name << ": " << r.detail << "\n";
  return j["passed"].get<bool>() ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  qat::tune_allocator();
  // Kernels are single-threaded; the variable is accepted for compatibility.
  if (const char* d = std::getenv("QAT_DETERMINISTIC"); d && std::string(d) != "0" && std::string(d) != "1") {
    std::cerr << "warning: QAT_DETERMINISTIC should be 0 or 1\n";
  }

  CLI::App app{"Quantization-aware training with transition-rate scheduling"};
  app.require_subcommand(1);

  std::string config;
  std::string out;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  bool force = false;

  auto* train = app.add_subcommand("train", "run one training job");
  train->add_option("--config", config, "config file")->required();
  train->add_option("--out", out, "output directory")->required();
  train->add_option("--set", sets, "override a config key (key=value), repeatable");
  train->add_option("--seed", seed, "override the seed");
  train->add_flag("--force", force, "write into a non-empty output directory");

  std::string lambdas = "1e-3,2e-3,3e-3,4e-3,5e-3,6e-3,7e-3,8e-3,9e-3,1e-2";
  int parallel = 1;
  auto* sweep = app.add_subcommand("sweep", "train across a grid of TR factors");
  sweep->add_option("--config", config, "config file")->required();
  sweep->add_option("--out", out, "output directory")->required();
  sweep->add_option("--lambdas", lambdas, "comma separated TR factors")->capture_default_str();
  sweep->add_option("--set", sets, "override a config key (key=value), repeatable");
  sweep->add_option("--parallel", parallel, "concurrent training processes")->capture_default_str();
  sweep->add_flag("--force", force, "write into a non-empty output directory");

  std::string run;
  std::optional<std::string> export_out;
  double smooth = 0.0;
  long every = 1;
  auto* exp = app.add_subcommand("export", "plot a run's metrics as SVG");
  exp->add_option("--run", run, "run directory or steps.csv")->required();
  exp->add_option("--out", export_out, "output directory (default <run>/export)");
  exp->add_option("--smooth", smooth, "EMA momentum in [0,1)")->capture_default_str();
  exp->add_option("--every", every, "keep every n-th point")->capture_default_str();

  std::string filter, fault;
  std::optional<std::string> report;
  auto* orc = app.add_subcommand("oracle", "run the oracle checks");
  orc->add_option("--filter", filter, "only groups containing this string");
  orc->add_option("--inject-fault", fault, "test hook: 'rounding'");
  orc->add_option("--report", report, "also write the JSON report here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    if (*train) return cmd_train(config, out, sets, seed, force);
    if (*sweep) return cmd_sweep(argv[0], config, out, lambdas, sets, parallel, force);
    if (*exp) {
      std::optional<fs::path> o;
      if (export_out) o = *export_out;
      return cmd_export(run, o, smooth, every);
    }
    if (*orc) {
      std::optional<fs::path> r;
      if (report) r = *report;
      return cmd_oracle(filter, fault, r);
    }
  } catch (const qat::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const qat::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kConfigError;
  } catch (const qat::CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kConfigError;
  } catch (const qat::ExportError& e) {
    std::cerr << "export error: " << e.what() << "\n";
    return kConfigError;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kCheckFailed;
  }
  return kOk;
}
