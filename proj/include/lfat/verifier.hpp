#ifndef LFAT_VERIFIER_HPP_
#define LFAT_VERIFIER_HPP_

// Verifier side: training-set management, model training, the online
// attestation round, and offline evaluation with confusion-matrix metrics.
// Attack is the positive class throughout.

#include <chrono>
#include <cstdint>
#include <fstream>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lfat/lof.hpp"
#include "lfat/monitor.hpp"
#include "lfat/net.hpp"
#include "lfat/protocol.hpp"
#include "lfat/workload.hpp"

namespace lfat::verifier {

// ---------------------------------------------------------------- metrics

/// Ratios with a zero denominator are left empty (reported as "NA").
struct EvaluationReport {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;
  std::optional<double> accuracy;
  std::optional<double> fnr;
  std::optional<double> fpr;
  std::optional<double> recall;
  std::optional<double> precision;
  std::optional<double> f1;

  friend bool operator==(const EvaluationReport&, const EvaluationReport&) = default;
};

inline std::optional<double> ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

/// Harmonic mean of precision and recall; empty when either is undefined or
/// both are zero.
inline std::optional<double> f1_score(std::optional<double> precision,
                                      std::optional<double> recall) {
  if (!precision || !recall || *precision + *recall == 0.0) return std::nullopt;
  return 2.0 * *precision * *recall / (*precision + *recall);
}

inline EvaluationReport metrics_from_confusion(std::uint64_t tp, std::uint64_t fp,
                                               std::uint64_t tn, std::uint64_t fn) {
  EvaluationReport r;
  r.tp = tp;
  r.fp = fp;
  r.tn = tn;
  r.fn = fn;
  r.accuracy = ratio(tp + tn, tp + fp + tn + fn);
  r.fnr = ratio(fn, fn + tp);
  r.fpr = ratio(fp, fp + tn);
  r.recall = ratio(tp, tp + fn);
  r.precision = ratio(tp, tp + fp);
  r.f1 = f1_score(r.precision, r.recall);
  return r;
}

/// Machine-readable form: a header row and one value row; ratios with 17
/// significant digits, undefined ratios as "NA".
std::string report_csv(const EvaluationReport& r);
EvaluationReport parse_report_csv(const std::string& text);
/// Human-readable table with percentages.
std::string report_table(const EvaluationReport& r);

// ---------------------------------------------------------------- training

struct TrainingEntry {
  FeatureVector features;
  std::string trace_path;
  std::uint64_t timestamp_ms = 0;
};

/// Append-only feature store with explicit reset, persisted as CSV
/// "trace_path,timestamp_ms,mean_ipc,mean_cache_accesses".
class TrainingStore {
 public:
  /// Throws Errc::InvalidArgument for non-finite or negative features.
  void append(const FeatureVector& f, std::string trace_path, std::uint64_t timestamp_ms);
  void reset() { entries_.clear(); }
  const std::vector<TrainingEntry>& entries() const { return entries_; }
  std::vector<FeatureVector> features() const;
  std::size_t size() const { return entries_.size(); }

  void save(const std::string& path) const;
  static TrainingStore load(const std::string& path);

 private:
  std::vector<TrainingEntry> entries_;
};

struct TrainOptions {
  std::size_t k = lof::kDefaultK;
  double quantile = lof::kDefaultQuantile;
  // Normal traces taken for training, in manifest order (0 = all).
  std::size_t train_count = 1000;
};

struct TrainResult {
  lof::LofModel model;
  TrainingStore store;
  std::size_t skipped_attack = 0;
  std::size_t skipped_incomplete = 0;
};

/// Extracts features from the first train_count Normal traces of the
/// manifest and fits the detector. Attack-labelled rows are skipped and
/// counted, as are truncated windows. Store timestamps record ingestion
/// time and do not influence the model. Throws Errc::InsufficientData,
/// Errc::FormatError.
TrainResult train(const std::string& manifest_path, const TrainOptions& opts = {});

// ---------------------------------------------------------------- evaluation

/// The classifier's verdict on one window: truncated or incomplete windows
/// are anomalous without consulting the model (score +inf).
lof::Verdict classify_window(const lof::LofModel& model, const TraceWindow& window);

struct EvaluateOptions {
  // Leading Normal traces (in manifest order) excluded as training data.
  std::size_t skip_normal = 1000;
};

/// Throws Errc::EmptyManifest when nothing is left to evaluate.
EvaluationReport evaluate(const lof::LofModel& model, const sim::Manifest& manifest,
                          const EvaluateOptions& opts = {});

// ---------------------------------------------------------------- online round

struct AttestationOutcome {
  std::optional<lof::Verdict> verdict;  // set only for accepted responses
  proto::VerifyStatus protocol_status = proto::VerifyStatus::MalformedResponse;
  std::optional<proto::ErrorReport> prover_error;
  std::string detail;
  std::string prover_id;
  std::string trigger_id;
  bool truncated = false;
  double preprocessing_us = 0.0;
  double prediction_us = 0.0;
  double total_us = 0.0;

  bool accepted() const { return protocol_status == proto::VerifyStatus::Accept; }
};

/// Tab-separated audit records:
/// timestamp_ms, prover_id, trigger_id, decision, score, reason.
class AuditLog {
 public:
  explicit AuditLog(const std::string& path);
  void record(const AttestationOutcome& outcome, std::uint64_t timestamp_ms);
  static std::string format(const AttestationOutcome& outcome, std::uint64_t timestamp_ms);

 private:
  std::mutex mu_;
  std::ofstream out_;
};

class Verifier {
 public:
  Verifier(lof::LofModel model, proto::Key key,
           proto::NonceSource rng = proto::system_nonce_source(), AuditLog* audit = nullptr,
           proto::MillisClock clock = proto::unix_now_ms);

  proto::Challenge challenge(const std::string& trigger_id, const MonitorConfig& cfg);

  /// Verifies an authenticated response message (canonical bytes + tag) and,
  /// if accepted, featurises and classifies it with timings.
  AttestationOutcome judge(std::span<const std::uint8_t> message);

  /// Full round against a prover over TCP. Network failures throw
  /// Errc::ProverUnreachable; protocol rejects come back in the outcome.
  AttestationOutcome attest(const net::Endpoint& prover, const std::string& trigger_id,
                            const MonitorConfig& cfg = {},
                            std::chrono::milliseconds connect_timeout = std::chrono::seconds(5));

  const lof::LofModel& model() const { return model_; }
  proto::NonceLedger& ledger() { return ledger_; }

 private:
  void log(const AttestationOutcome& outcome);

  lof::LofModel model_;
  proto::Key key_;
  proto::NonceSource rng_;
  AuditLog* audit_;
  proto::NonceLedger ledger_;
};

}  // namespace lfat::verifier

#endif  // LFAT_VERIFIER_HPP_
