#ifndef LFAT_WORKLOAD_HPP_
#define LFAT_WORKLOAD_HPP_

// Deterministic simulator of a six-stage sensor-monitoring application
// (init, sampling, filtering, encryption, save, exit) and of two control-flow
// hijacks through its sampling-stage buffer overflow: injected foreign code,
// and skipping the encryption stage. Also generates labelled datasets and
// reads/writes the on-disk dataset layout.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lfat/monitor.hpp"
#include "lfat/trace.hpp"

namespace lfat::sim {

enum class StageId {
  N1_Init,
  N2_Sampling,
  N3_Filtering,
  N4_Encryption,
  N5_Save,
  N6_Exit,
  INJ_Foreign,
};

std::string_view to_string(StageId id);

enum class RunMode { Normal, CodeInjection, NodeSkipping };

std::string_view to_string(RunMode mode);
RunMode parse_run_mode(std::string_view text);
inline RunMode run_mode_of(AttackMode m) {
  return m == AttackMode::CodeInjection ? RunMode::CodeInjection : RunMode::NodeSkipping;
}

/// Simulated time step. Stage durations are counted in these intervals.
inline constexpr std::uint64_t kSimIntervalUs = 1000;
/// Cycles elapsed per simulated interval (a 3.7 GHz core over 1 ms).
inline constexpr std::uint64_t kCyclesPerInterval = 3'700'000;
inline constexpr double kDefaultInputVariation = 0.5;
inline constexpr std::string_view kDefaultTrigger = "N2-entry";

struct StageProfile {
  double mean_ipc = 1.0;
  double ipc_jitter = 0.0;    // per-interval standard deviation
  double mean_cache = 0.0;    // accesses per interval
  double cache_jitter = 0.0;  // per-interval standard deviation
  std::uint32_t duration = 1;         // intervals
  std::uint32_t duration_jitter = 0;  // +/- bound, intervals
};

using ProfileSet = std::map<StageId, StageProfile>;

/// Calibration constants of the simulator (not measurements).
ProfileSet default_profiles();

struct RunSpec {
  RunMode mode = RunMode::Normal;
  std::uint64_t seed = 0;
  ProfileSet profiles = default_profiles();
  double input_variation = kDefaultInputVariation;  // in [0, 1]
};

std::vector<StageId> stage_sequence(RunMode mode);

/// Maps "N<k>-entry" (k = 1..6) to the stage it marks.
std::optional<StageId> trigger_stage(std::string_view trigger_id);

struct StageSegment {
  StageId stage;
  std::uint64_t first_interval;
  std::uint64_t length;
};

/// One fully simulated run. Cumulative counters are precomputed per interval
/// boundary, so cumulative(i) is the state after i intervals.
class SyntheticRun {
 public:
  /// Throws Errc::InvalidArgument when the profile set misses a stage the
  /// mode visits or holds invalid values.
  explicit SyntheticRun(const RunSpec& spec);

  std::uint64_t total_intervals() const { return cumulative_.size() - 1; }
  const std::vector<StageSegment>& segments() const { return segments_; }
  /// Interval index at which `stage` begins; nullopt if the run never visits it.
  std::optional<std::uint64_t> stage_entry(StageId stage) const;
  std::optional<StageId> stage_at(std::uint64_t interval) const;
  const CounterReading& cumulative(std::uint64_t intervals) const { return cumulative_.at(intervals); }
  /// Per-interval deltas of interval `i`.
  CounterReading delta(std::uint64_t i) const;

 private:
  std::vector<StageSegment> segments_;
  std::vector<CounterReading> cumulative_;
};

/// Simulated counters as a deterministic cumulative stream.
inline SyntheticRun synth_counters(const RunSpec& spec) { return SyntheticRun(spec); }

/// CounterSource view of a SyntheticRun. Time 0 on `clock` corresponds to
/// interval `origin`; the process counts as exited once the clock passes the
/// end of the run.
class SyntheticSource final : public CounterSource {
 public:
  SyntheticSource(const SyntheticRun& run, const SamplingClock& clock, std::uint64_t origin)
      : run_(run), clock_(clock), origin_(origin) {}

  std::optional<CounterReading> read() override;
  std::string describe() const override;

 private:
  const SyntheticRun& run_;
  const SamplingClock& clock_;
  std::uint64_t origin_;
};

/// Runs the simulator up to `trigger_id` and samples one window with a
/// virtual clock. Returns nullopt when the run never reaches the trigger.
std::optional<TraceWindow> simulate_window(const RunSpec& spec, const MonitorConfig& cfg,
                                           std::string_view trigger_id = kDefaultTrigger);

struct DatasetOptions {
  MonitorConfig monitor{};
  std::string trigger_id{kDefaultTrigger};
  ProfileSet profiles = default_profiles();
  double input_variation = kDefaultInputVariation;
};

/// n_normal Normal runs followed by n_attack attack runs; the first
/// round(attack_mix * n_attack) attacks are CodeInjection, the rest
/// NodeSkipping. Run i uses seed base_seed + i.
std::vector<LabeledTrace> generate_dataset(std::uint64_t n_normal, std::uint64_t n_attack,
                                           std::uint64_t base_seed, double attack_mix,
                                           const DatasetOptions& opts = {});

// ---------------------------------------------------------------- on-disk layout

struct ManifestEntry {
  std::string path;  // as written in the manifest (relative to its directory)
  Label label = Label::Normal;
  std::string mode;  // "normal", "code-injection" or "node-skipping"
  std::uint64_t seed = 0;
};

struct Manifest {
  std::string directory;  // directory holding the manifest file
  std::vector<ManifestEntry> entries;

  std::string resolve(const ManifestEntry& e) const;
};

/// Writes <dir>/<label>/<mode>/<seed>.csv per trace and <dir>/manifest.csv
/// (header "path,label,mode,seed"). Returns the manifest path.
std::string write_dataset(const std::string& dir, const std::vector<LabeledTrace>& traces);

/// Throws Errc::FormatError with the offending line.
Manifest read_manifest(const std::string& manifest_path);

}  // namespace lfat::sim

#endif  // LFAT_WORKLOAD_HPP_
