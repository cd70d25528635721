#include "lfat/cli.hpp"

#include <pthread.h>
#include <signal.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "lfat/config.hpp"
#include "lfat/prover.hpp"
#include "lfat/verifier.hpp"
#include "lfat/workload.hpp"

namespace lfat::cli {

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Config entries fill only options not given on the command line.
struct ConfigBinding {
  std::string key;
  CLI::Option* option;
  std::function<void(const std::string&)> assign;
};

void apply_config(const std::string& path, const std::vector<ConfigBinding>& bindings) {
  if (path.empty()) return;
  std::set<std::string> allowed;
  for (const auto& b : bindings) allowed.insert(b.key);
  const Config cfg = Config::load(path, allowed);
  for (const auto& b : bindings) {
    if (b.option->count() > 0) continue;
    if (auto v = cfg.get(b.key)) b.assign(*v);
  }
}

template <typename T>
std::function<void(const std::string&)> assign_to(T& target, const std::string& key) {
  return [&target, key](const std::string& text) {
    if constexpr (std::is_same_v<T, std::string>) {
      target = text;
    } else if constexpr (std::is_same_v<T, bool>) {
      if (text == "1" || text == "true") {
        target = true;
      } else if (text == "0" || text == "false") {
        target = false;
      } else {
        throw UsageError("config key " + key + " expects true/false");
      }
    } else {
      std::istringstream in(text);
      T value{};
      if (!(in >> value) || !in.eof()) throw UsageError("config key " + key + ": bad value '" + text + "'");
      target = value;
    }
  };
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// ---------------------------------------------------------------- gen-data

struct GenDataArgs {
  std::uint64_t normal = 1500;
  std::uint64_t attack = 1500;
  std::uint64_t seed = 42;
  double attack_mix = 0.5;
  double input_variation = sim::kDefaultInputVariation;
  std::uint64_t period_us = 1000;
  std::uint64_t duration_us = 300000;
  std::string trigger{sim::kDefaultTrigger};
  std::string out = "dataset";
};

int run_gen_data(const GenDataArgs& a, std::ostream& out) {
  sim::DatasetOptions opts;
  opts.monitor = {a.period_us, a.duration_us};
  opts.trigger_id = a.trigger;
  opts.input_variation = a.input_variation;
  const auto traces = sim::generate_dataset(a.normal, a.attack, a.seed, a.attack_mix, opts);
  const std::string manifest = sim::write_dataset(a.out, traces);
  out << "wrote " << traces.size() << " traces (" << a.normal << " normal, " << a.attack
      << " attack); manifest " << manifest << '\n';
  return kOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string manifest = "dataset/manifest.csv";
  std::size_t k = lof::kDefaultK;
  double quantile = lof::kDefaultQuantile;
  std::size_t train_count = 1000;
  std::string model = "model.lfm";
  std::string store;
};

int run_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  verifier::TrainOptions opts;
  opts.k = a.k;
  opts.quantile = a.quantile;
  opts.train_count = a.train_count;
  const auto result = verifier::train(a.manifest, opts);
  if (result.skipped_attack > 0) {
    err << "warning: skipped " << result.skipped_attack
        << " attack-labelled traces (training uses normal traces only)\n";
  }
  if (result.skipped_incomplete > 0) {
    err << "warning: skipped " << result.skipped_incomplete << " truncated normal traces\n";
  }
  if (result.model.degenerate()) {
    err << "warning: DegenerateFeatures: a feature has zero variance; its scale was set to 1\n";
  }
  result.model.save_file(a.model);
  if (!a.store.empty()) result.store.save(a.store);
  char line[160];
  std::snprintf(line, sizeof line, "trained on %zu normal traces, k=%zu, threshold=%.6f\n",
                result.store.size(), result.model.k(), result.model.threshold());
  out << line << "model written to " << a.model << '\n';
  return kOk;
}

// ---------------------------------------------------------------- run-prover

struct ProverArgs {
  std::string config;
  prover::ProverConfig cfg;
  std::string backend = "synthetic";
  std::string workload = "normal";
  std::string triggers{sim::kDefaultTrigger};
  std::size_t max_rounds = 0;
};

int run_prover(ProverArgs& a, std::ostream& out) {
  a.cfg.backend = prover::parse_backend(a.backend);
  a.cfg.workload = sim::parse_run_mode(a.workload);
  a.cfg.triggers = split_list(a.triggers);
  for (const auto& t : a.cfg.triggers) {
    if (!valid_identifier(t)) throw UsageError("invalid trigger id '" + t + "'");
  }
  if (a.cfg.key_file.empty()) throw UsageError("run-prover needs --key-file (or key_file in --config)");
  const proto::Key key = proto::load_key_file(a.cfg.key_file);

  // SIGINT/SIGTERM are taken by a dedicated thread so shutdown runs in
  // ordinary (non-handler) context.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  prover::ProverAgent agent(a.cfg, key);
  net::Listener listener = net::Listener::tcp(net::parse_endpoint(a.cfg.listen));
  std::optional<net::Listener> channel;
  std::thread channel_thread;
  if (a.cfg.backend == prover::Backend::Perf) {
    channel = net::Listener::unix_domain(a.cfg.trigger_channel);
    channel_thread = std::thread([&] { agent.serve_triggers(*channel); });
  }
  std::thread signal_thread([&] {
    int sig = 0;
    sigwait(&set, &sig);
    agent.stop();
  });

  out << "prover " << a.cfg.prover_id << " listening on "
      << net::parse_endpoint(a.cfg.listen).host << ':' << listener.port() << " (backend "
      << prover::to_string(a.cfg.backend) << ")" << std::endl;
  agent.serve(listener, a.max_rounds);
  agent.stop();
  pthread_kill(signal_thread.native_handle(), SIGTERM);
  signal_thread.join();
  if (channel_thread.joinable()) channel_thread.join();
  pthread_sigmask(SIG_UNBLOCK, &set, nullptr);
  out << "served " << agent.rounds() << " attestation round(s)\n";
  return kOk;
}

// ---------------------------------------------------------------- attest

struct AttestArgs {
  std::string config;
  std::string prover = "127.0.0.1:7000";
  std::string trigger{sim::kDefaultTrigger};
  std::uint64_t period_us = 1000;
  std::uint64_t duration_us = 300000;
  std::string key_file;
  std::string model = "model.lfm";
  std::string audit_log;
  std::uint64_t timeout_ms = 5000;
};

int run_attest(const AttestArgs& a, std::ostream& out) {
  if (a.key_file.empty()) throw UsageError("attest needs --key-file (or key_file in --config)");
  const proto::Key key = proto::load_key_file(a.key_file);
  lof::LofModel model = lof::LofModel::load_file(a.model);
  std::optional<verifier::AuditLog> audit;
  if (!a.audit_log.empty()) audit.emplace(a.audit_log);
  verifier::Verifier v(std::move(model), key, proto::system_nonce_source(),
                       audit ? &*audit : nullptr);
  const auto outcome = v.attest(net::parse_endpoint(a.prover), a.trigger,
                                {a.period_us, a.duration_us},
                                std::chrono::milliseconds(a.timeout_ms));
  if (!outcome.accepted()) {
    out << "protocol=" << (outcome.prover_error ? to_string(outcome.prover_error->code)
                                                 : proto::to_string(outcome.protocol_status));
    if (!outcome.detail.empty()) out << " detail=\"" << outcome.detail << '"';
    out << '\n';
    return kProtocolReject;
  }
  char line[256];
  std::snprintf(line, sizeof line,
                "protocol=Accept prover=%s verdict=%s score=%.6g threshold=%.6g truncated=%d "
                "preprocessing_us=%.3f prediction_us=%.3f total_us=%.3f\n",
                outcome.prover_id.c_str(), lof::to_string(outcome.verdict->decision),
                outcome.verdict->score, outcome.verdict->threshold_used, outcome.truncated ? 1 : 0,
                outcome.preprocessing_us, outcome.prediction_us, outcome.total_us);
  out << line;
  return outcome.verdict->decision == lof::Decision::Normal ? kOk : kAnomalous;
}

// ---------------------------------------------------------------- evaluate / report

struct EvaluateArgs {
  std::string manifest = "dataset/manifest.csv";
  std::string model = "model.lfm";
  std::size_t skip_normal = 1000;
  std::string out = "report.csv";
};

int run_evaluate(const EvaluateArgs& a, std::ostream& out) {
  const lof::LofModel model = lof::LofModel::load_file(a.model);
  const auto report =
      verifier::evaluate(model, sim::read_manifest(a.manifest), {a.skip_normal});
  std::ofstream csv(a.out, std::ios::binary | std::ios::trunc);
  if (!csv) throw Error(Errc::IoError, "cannot write report " + a.out);
  csv << verifier::report_csv(report);
  if (!csv) throw Error(Errc::IoError, "write failed for " + a.out);
  out << verifier::report_table(report) << "report written to " << a.out << '\n';
  return kOk;
}

struct ReportArgs {
  std::string in = "report.csv";
  bool csv = false;
};

int run_report(const ReportArgs& a, std::ostream& out) {
  std::ifstream in(a.in, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open report " + a.in);
  std::ostringstream buf;
  buf << in.rdbuf();
  const auto report = verifier::parse_report_csv(buf.str());
  out << (a.csv ? verifier::report_csv(report) : verifier::report_table(report));
  return kOk;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Lightweight control-flow attestation from performance-counter traces", "lfat"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a labelled synthetic trace dataset");
  gen_cmd->option_defaults()->always_capture_default();
  gen_cmd->add_option("--normal", gen.normal, "Number of normal runs");
  gen_cmd->add_option("--attack", gen.attack, "Number of attack runs");
  gen_cmd->add_option("--seed", gen.seed, "Base seed; run i uses seed + i");
  gen_cmd->add_option("--attack-mix", gen.attack_mix, "Fraction of attacks that are code injection")
      ->check(CLI::Range(0.0, 1.0));
  gen_cmd->add_option("--input-variation", gen.input_variation, "Run-to-run parameter drift")
      ->check(CLI::Range(0.0, 1.0));
  gen_cmd->add_option("--period-us", gen.period_us, "Sampling period in microseconds")
      ->check(CLI::PositiveNumber);
  gen_cmd->add_option("--duration-us", gen.duration_us, "Monitoring window in microseconds")
      ->check(CLI::PositiveNumber);
  gen_cmd->add_option("--trigger", gen.trigger, "Trigger point that opens the window");
  gen_cmd->add_option("--out", gen.out, "Output directory");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Fit the LOF detector on normal traces");
  train_cmd->option_defaults()->always_capture_default();
  train_cmd->add_option("--manifest", tr.manifest, "Dataset manifest");
  train_cmd->add_option("--k", tr.k, "LOF neighbourhood size")->check(CLI::PositiveNumber);
  train_cmd->add_option("--quantile", tr.quantile, "Threshold calibration quantile")
      ->check(CLI::Range(0.0, 1.0));
  train_cmd->add_option("--train-count", tr.train_count,
                        "Leading normal traces used for training (0 = all)");
  train_cmd->add_option("--model", tr.model, "Output model file");
  train_cmd->add_option("--store", tr.store, "Training-store CSV to write (default: none)");

  ProverArgs pv;
  std::vector<ConfigBinding> prover_bindings;
  auto* prover_cmd = app.add_subcommand("run-prover", "Serve attestation challenges");
  prover_cmd->option_defaults()->always_capture_default();
  prover_cmd->add_option("--config", pv.config, "key=value configuration file (default: none)");
  auto bind = [&](std::vector<ConfigBinding>& list, const std::string& key, CLI::Option* opt,
                  auto& target) { list.push_back({key, opt, assign_to(target, key)}); };
  bind(prover_bindings, "listen",
       prover_cmd->add_option("--listen", pv.cfg.listen, "TCP listen address host:port"),
       pv.cfg.listen);
  bind(prover_bindings, "key_file",
       prover_cmd->add_option("--key-file", pv.cfg.key_file, "Shared key file, 64 hex chars (default: none, required)"),
       pv.cfg.key_file);
  bind(prover_bindings, "prover_id",
       prover_cmd->add_option("--prover-id", pv.cfg.prover_id, "Identity echoed in responses"),
       pv.cfg.prover_id);
  bind(prover_bindings, "trigger_channel",
       prover_cmd->add_option("--trigger-channel", pv.cfg.trigger_channel,
                              "Unix socket for trigger signals (perf backend)"),
       pv.cfg.trigger_channel);
  bind(prover_bindings, "backend",
       prover_cmd->add_option("--backend", pv.backend, "Counter backend: synthetic or perf"),
       pv.backend);
  bind(prover_bindings, "workload",
       prover_cmd->add_option("--workload", pv.workload,
                              "Synthetic workload: normal, code-injection or node-skipping"),
       pv.workload);
  bind(prover_bindings, "seed",
       prover_cmd->add_option("--seed", pv.cfg.seed, "Synthetic workload base seed"),
       pv.cfg.seed);
  bind(prover_bindings, "triggers",
       prover_cmd->add_option("--triggers", pv.triggers, "Comma-separated known trigger ids"),
       pv.triggers);
  bind(prover_bindings, "realtime",
       prover_cmd->add_flag("--realtime", pv.cfg.realtime,
                            "Pace the synthetic backend in wall-clock time (default: off)"),
       pv.cfg.realtime);
  prover_cmd->add_option("--max-rounds", pv.max_rounds, "Exit after this many rounds (0 = never)");

  AttestArgs at;
  std::vector<ConfigBinding> attest_bindings;
  auto* attest_cmd = app.add_subcommand(
      "attest", "Run one attestation round (exit 0 normal, 3 anomalous, 4 protocol reject)");
  attest_cmd->option_defaults()->always_capture_default();
  attest_cmd->add_option("--config", at.config, "key=value configuration file (default: none)");
  bind(attest_bindings, "prover",
       attest_cmd->add_option("--prover", at.prover, "Prover address host:port"), at.prover);
  bind(attest_bindings, "trigger",
       attest_cmd->add_option("--trigger", at.trigger, "Trigger point to challenge"), at.trigger);
  bind(attest_bindings, "period_us",
       attest_cmd->add_option("--period-us", at.period_us, "Sampling period in microseconds")
           ->check(CLI::PositiveNumber),
       at.period_us);
  bind(attest_bindings, "duration_us",
       attest_cmd->add_option("--duration-us", at.duration_us, "Monitoring window in microseconds")
           ->check(CLI::PositiveNumber),
       at.duration_us);
  bind(attest_bindings, "key_file",
       attest_cmd->add_option("--key-file", at.key_file, "Shared key file, 64 hex chars (default: none, required)"),
       at.key_file);
  bind(attest_bindings, "model",
       attest_cmd->add_option("--model", at.model, "Trained model file"), at.model);
  bind(attest_bindings, "audit_log",
       attest_cmd->add_option("--audit-log", at.audit_log, "Append audit records to this file (default: none)"),
       at.audit_log);
  bind(attest_bindings, "timeout_ms",
       attest_cmd->add_option("--timeout-ms", at.timeout_ms, "Connect timeout in milliseconds"),
       at.timeout_ms);

  EvaluateArgs ev;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score a labelled dataset with a trained model");
  eval_cmd->option_defaults()->always_capture_default();
  eval_cmd->add_option("--manifest", ev.manifest, "Dataset manifest");
  eval_cmd->add_option("--model", ev.model, "Trained model file");
  eval_cmd->add_option("--skip-normal", ev.skip_normal,
                       "Leading normal traces held out as training data");
  eval_cmd->add_option("--out", ev.out, "Report CSV output");

  ReportArgs rp;
  auto* report_cmd = app.add_subcommand("report", "Print a saved evaluation report");
  report_cmd->option_defaults()->always_capture_default();
  report_cmd->add_option("--in", rp.in, "Report CSV written by evaluate");
  report_cmd->add_flag("--csv", rp.csv, "Print CSV instead of the table (default: off)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    out << sub->help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\nRun with --help for usage.\n";
    return kUsageError;
  }

  try {
    if (gen_cmd->parsed()) return run_gen_data(gen, out);
    if (train_cmd->parsed()) return run_train(tr, out, err);
    if (prover_cmd->parsed()) {
      apply_config(pv.config, prover_bindings);
      return run_prover(pv, out);
    }
    if (attest_cmd->parsed()) {
      apply_config(at.config, attest_bindings);
      return run_attest(at, out);
    }
    if (eval_cmd->parsed()) return run_evaluate(ev, out);
    if (report_cmd->parsed()) return run_report(rp, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return (e.code() == Errc::InvalidArgument) ? kUsageError : kOperationalError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kOperationalError;
  }
  return kUsageError;
}

int dispatch(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dispatch(args, std::cout, std::cerr);
}

}  // namespace lfat::cli
