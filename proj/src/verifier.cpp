#include "lfat/verifier.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <limits>
#include <sstream>

namespace lfat::verifier {

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string opt17(const std::optional<double>& v) { return v ? fmt17(*v) : "NA"; }

std::string percent(const std::optional<double>& v) {
  if (!v) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", *v * 100.0);
  return buf;
}

std::optional<double> parse_opt(const std::string& s) {
  if (s == "NA") return std::nullopt;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw Error(Errc::FormatError, "bad report value '" + s + "'");
  }
  return v;
}

std::uint64_t parse_count(const std::string& s) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw Error(Errc::FormatError, "bad report count '" + s + "'");
  }
  return v;
}

constexpr const char* kReportHeader = "tp,fp,tn,fn,accuracy,fnr,fpr,recall,precision,f1";

double micros_between(std::chrono::steady_clock::time_point a,
                      std::chrono::steady_clock::time_point b) {
  return std::chrono::duration<double, std::micro>(b - a).count();
}

}  // namespace

// ---------------------------------------------------------------- reports

std::string report_csv(const EvaluationReport& r) {
  std::ostringstream os;
  os << kReportHeader << '\n'
     << r.tp << ',' << r.fp << ',' << r.tn << ',' << r.fn << ',' << opt17(r.accuracy) << ','
     << opt17(r.fnr) << ',' << opt17(r.fpr) << ',' << opt17(r.recall) << ','
     << opt17(r.precision) << ',' << opt17(r.f1) << '\n';
  return os.str();
}

EvaluationReport parse_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string header, values;
  if (!std::getline(in, header) || header != kReportHeader) {
    throw Error(Errc::FormatError, "report CSV must start with '" + std::string(kReportHeader) + "'");
  }
  if (!std::getline(in, values)) throw Error(Errc::FormatError, "report CSV has no value row");
  std::vector<std::string> cols;
  std::stringstream ss(values);
  for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
  if (cols.size() != 10) throw Error(Errc::FormatError, "report CSV needs 10 columns");
  EvaluationReport r;
  r.tp = parse_count(cols[0]);
  r.fp = parse_count(cols[1]);
  r.tn = parse_count(cols[2]);
  r.fn = parse_count(cols[3]);
  r.accuracy = parse_opt(cols[4]);
  r.fnr = parse_opt(cols[5]);
  r.fpr = parse_opt(cols[6]);
  r.recall = parse_opt(cols[7]);
  r.precision = parse_opt(cols[8]);
  r.f1 = parse_opt(cols[9]);
  return r;
}

std::string report_table(const EvaluationReport& r) {
  std::ostringstream os;
  os << "Confusion matrix (positive class: attack)\n"
     << "  TP " << r.tp << "  FN " << r.fn << '\n'
     << "  FP " << r.fp << "  TN " << r.tn << "\n\n";
  const std::pair<const char*, std::optional<double>> rows[] = {
      {"Accuracy", r.accuracy}, {"FNR", r.fnr},         {"FPR", r.fpr},
      {"Recall", r.recall},     {"Precision", r.precision}, {"F1", r.f1},
  };
  for (const auto& [name, value] : rows) {
    char line[64];
    std::snprintf(line, sizeof line, "  %-10s %8s\n", name, percent(value).c_str());
    os << line;
  }
  return os.str();
}

// ---------------------------------------------------------------- training store

void TrainingStore::append(const FeatureVector& f, std::string trace_path,
                           std::uint64_t timestamp_ms) {
  validate(f);
  entries_.push_back(TrainingEntry{f, std::move(trace_path), timestamp_ms});
}

std::vector<FeatureVector> TrainingStore::features() const {
  std::vector<FeatureVector> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.features);
  return out;
}

void TrainingStore::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write training store " + path);
  out << "trace_path,timestamp_ms,mean_ipc,mean_cache_accesses\n";
  for (const auto& e : entries_) {
    out << e.trace_path << ',' << e.timestamp_ms << ',' << fmt17(e.features.mean_ipc) << ','
        << fmt17(e.features.mean_cache_accesses) << '\n';
  }
  if (!out) throw Error(Errc::IoError, "write failed for " + path);
}

TrainingStore TrainingStore::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open training store " + path);
  TrainingStore store;
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line) || line != "trace_path,timestamp_ms,mean_ipc,mean_cache_accesses") {
    throw Error(Errc::FormatError, path + ": bad training store header");
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
    try {
      if (cols.size() != 4) throw Error(Errc::FormatError, "expected 4 columns");
      const auto ipc = parse_opt(cols[2]);
      const auto cache = parse_opt(cols[3]);
      if (!ipc || !cache) throw Error(Errc::FormatError, "missing feature value");
      store.append({*ipc, *cache}, cols[0], parse_count(cols[1]));
    } catch (const Error& e) {
      throw Error(Errc::FormatError, path + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return store;
}

TrainResult train(const std::string& manifest_path, const TrainOptions& opts) {
  const sim::Manifest manifest = sim::read_manifest(manifest_path);
  TrainingStore store;
  std::size_t skipped_attack = 0;
  std::size_t skipped_incomplete = 0;
  for (const auto& e : manifest.entries) {
    if (e.label == Label::Attack) {
      ++skipped_attack;
      continue;
    }
    if (opts.train_count != 0 && store.size() + skipped_incomplete >= opts.train_count) continue;
    const TraceWindow w = read_trace_file(manifest.resolve(e));
    if (!w.complete()) {
      ++skipped_incomplete;
      continue;
    }
    store.append(compute_features(w), e.path, proto::unix_now_ms());
  }
  const auto features = store.features();
  lof::LofModel model = lof::LofModel::fit(features, opts.k, opts.quantile);
  return TrainResult{std::move(model), std::move(store), skipped_attack, skipped_incomplete};
}

// ---------------------------------------------------------------- evaluation

lof::Verdict classify_window(const lof::LofModel& model, const TraceWindow& window) {
  if (!window.complete()) {
    return lof::Verdict{lof::Decision::Anomalous, std::numeric_limits<double>::infinity(),
                        model.threshold()};
  }
  return model.predict(compute_features(window));
}

EvaluationReport evaluate(const lof::LofModel& model, const sim::Manifest& manifest,
                          const EvaluateOptions& opts) {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t normals_seen = 0;
  for (const auto& e : manifest.entries) {
    if (e.label == Label::Normal && normals_seen++ < opts.skip_normal) continue;
    const TraceWindow w = read_trace_file(manifest.resolve(e));
    const bool flagged = classify_window(model, w).decision == lof::Decision::Anomalous;
    if (e.label == Label::Attack) {
      flagged ? ++tp : ++fn;
    } else {
      flagged ? ++fp : ++tn;
    }
  }
  if (tp + fp + tn + fn == 0) {
    throw Error(Errc::EmptyManifest, "no traces left to evaluate after skipping " +
                                         std::to_string(opts.skip_normal) + " normal traces");
  }
  return metrics_from_confusion(tp, fp, tn, fn);
}

// ---------------------------------------------------------------- audit log

AuditLog::AuditLog(const std::string& path) : out_(path, std::ios::app) {
  if (!out_) throw Error(Errc::IoError, "cannot open audit log " + path);
}

std::string AuditLog::format(const AttestationOutcome& o, std::uint64_t timestamp_ms) {
  std::string reason = o.prover_error ? to_string(o.prover_error->code)
                                      : proto::to_string(o.protocol_status);
  if (o.truncated) reason += "+truncated";
  std::ostringstream os;
  os << timestamp_ms << '\t' << (o.prover_id.empty() ? "-" : o.prover_id) << '\t'
     << (o.trigger_id.empty() ? "-" : o.trigger_id) << '\t'
     << (o.verdict ? lof::to_string(o.verdict->decision) : "None") << '\t'
     << (o.verdict ? fmt17(o.verdict->score) : "NA") << '\t' << reason << '\n';
  return os.str();
}

void AuditLog::record(const AttestationOutcome& outcome, std::uint64_t timestamp_ms) {
  std::lock_guard lock(mu_);
  out_ << format(outcome, timestamp_ms);
  out_.flush();
}

// ---------------------------------------------------------------- verifier

Verifier::Verifier(lof::LofModel model, proto::Key key, proto::NonceSource rng, AuditLog* audit,
                   proto::MillisClock clock)
    : model_(std::move(model)),
      key_(key),
      rng_(std::move(rng)),
      audit_(audit),
      ledger_(proto::kRetention, std::move(clock)) {}

proto::Challenge Verifier::challenge(const std::string& trigger_id, const MonitorConfig& cfg) {
  return proto::make_challenge(trigger_id, cfg.period_us, cfg.duration_us, ledger_, rng_);
}

void Verifier::log(const AttestationOutcome& outcome) {
  if (!outcome.accepted()) {
    std::clog << "lfat verifier: rejected response from "
              << (outcome.prover_id.empty() ? "<unknown>" : outcome.prover_id) << ": "
              << (outcome.prover_error ? to_string(outcome.prover_error->code)
                                       : proto::to_string(outcome.protocol_status))
              << (outcome.detail.empty() ? "" : " (" + outcome.detail + ")") << '\n';
  }
  if (audit_) audit_->record(outcome, ledger_.now_ms());
}

AttestationOutcome Verifier::judge(std::span<const std::uint8_t> message) {
  AttestationOutcome out;
  proto::VerifyResult vr = proto::verify_response_bytes(message, key_, ledger_);
  out.protocol_status = vr.status;
  out.detail = vr.detail;
  if (vr.response) {
    out.prover_id = vr.response->prover_id;
    out.trigger_id = vr.response->window.trigger_id;
  }
  if (vr.status != proto::VerifyStatus::Accept) {
    log(out);
    return out;
  }
  const TraceWindow& window = vr.response->window;
  if (!window.complete()) {
    out.truncated = true;
    out.verdict = lof::Verdict{lof::Decision::Anomalous, std::numeric_limits<double>::infinity(),
                               model_.threshold()};
    log(out);
    return out;
  }

  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  const FeatureVector features = compute_features(window);
  const auto t1 = clock::now();
  lof::Verdict verdict = model_.predict(features);
  const auto t2 = clock::now();
  try {
    validate(features);
  } catch (const Error& e) {
    // Physically implausible counters cannot come from a healthy run.
    verdict = lof::Verdict{lof::Decision::Anomalous, std::numeric_limits<double>::infinity(),
                           model_.threshold()};
    out.detail = e.what();
  }
  out.verdict = verdict;
  out.preprocessing_us = micros_between(t0, t1);
  out.prediction_us = micros_between(t1, t2);
  out.total_us = out.preprocessing_us + out.prediction_us;
  log(out);
  return out;
}

AttestationOutcome Verifier::attest(const net::Endpoint& prover, const std::string& trigger_id,
                                    const MonitorConfig& cfg,
                                    std::chrono::milliseconds connect_timeout) {
  const proto::Challenge c = challenge(trigger_id, cfg);
  try {
    net::Stream stream = net::connect_tcp(prover, connect_timeout);
    // The prover may wait up to the window plus grace for the trigger, then
    // samples for the window itself.
    stream.set_timeout(std::chrono::milliseconds(2 * (cfg.duration_us / 1000) + proto::kGraceMs) +
                       connect_timeout);
    stream.send_frame(proto::MessageType::Challenge, proto::encode_challenge(c));
    auto reply = stream.recv_frame();
    if (!reply) throw Error(Errc::ProverUnreachable, "prover closed the connection");
    if (reply->type == proto::MessageType::Response) return judge(reply->payload);

    AttestationOutcome out;
    out.trigger_id = trigger_id;
    if (reply->type == proto::MessageType::Error) {
      out.prover_error = proto::decode_error(reply->payload);
      out.detail = out.prover_error->message;
    } else {
      out.detail = "unexpected message type from prover";
    }
    log(out);
    return out;
  } catch (const Error& e) {
    if (e.code() == Errc::ProverUnreachable) throw;
    if (e.code() == Errc::IoError) throw Error(Errc::ProverUnreachable, e.what());
    if (e.code() == Errc::FormatError) {
      AttestationOutcome out;
      out.trigger_id = trigger_id;
      out.detail = e.what();
      log(out);
      return out;
    }
    throw;
  }
}

}  // namespace lfat::verifier
