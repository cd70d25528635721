#include "lfat/workload.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace lfat::sim {

namespace fs = std::filesystem;

namespace {

// Engine output is mapped to variates by hand because the standard
// distributions are implementation-defined; datasets must be byte-identical
// across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  /// Uniform on [-1, 1).
  double symmetric() { return 2.0 * uniform() - 1.0; }
  /// Integer uniform on [-bound, bound].
  std::int64_t symmetric_int(std::uint32_t bound) {
    const std::uint64_t span = 2 * static_cast<std::uint64_t>(bound) + 1;
    return static_cast<std::int64_t>(engine_() % span) - static_cast<std::int64_t>(bound);
  }
  /// Standard normal (Box-Muller, one variate per call).
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 engine_;
};

void check_profile(StageId id, const StageProfile& p) {
  if (!(p.mean_ipc > 0.0) || !(p.mean_cache > 0.0) || !(p.ipc_jitter >= 0.0) ||
      !(p.cache_jitter >= 0.0) || p.duration < 1) {
    throw Error(Errc::InvalidArgument,
                "invalid stage profile for " + std::string(to_string(id)));
  }
}

std::uint64_t parse_seed(std::string_view text, std::size_t line_no) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) {
    throw Error(Errc::FormatError, "manifest line " + std::to_string(line_no) + ": bad seed");
  }
  return v;
}

}  // namespace

std::string_view to_string(StageId id) {
  switch (id) {
    case StageId::N1_Init: return "N1_Init";
    case StageId::N2_Sampling: return "N2_Sampling";
    case StageId::N3_Filtering: return "N3_Filtering";
    case StageId::N4_Encryption: return "N4_Encryption";
    case StageId::N5_Save: return "N5_Save";
    case StageId::N6_Exit: return "N6_Exit";
    case StageId::INJ_Foreign: return "INJ_Foreign";
  }
  return "?";
}

std::string_view to_string(RunMode mode) {
  switch (mode) {
    case RunMode::Normal: return "normal";
    case RunMode::CodeInjection: return "code-injection";
    case RunMode::NodeSkipping: return "node-skipping";
  }
  return "?";
}

RunMode parse_run_mode(std::string_view text) {
  if (text == "normal") return RunMode::Normal;
  if (text == "code-injection") return RunMode::CodeInjection;
  if (text == "node-skipping") return RunMode::NodeSkipping;
  throw Error(Errc::InvalidArgument, "unknown workload mode '" + std::string(text) + "'");
}

ProfileSet default_profiles() {
  // Encryption is compute-dense; injected code is memory-noisy.
  auto stage = [](double ipc, double cache, std::uint32_t duration, std::uint32_t jitter) {
    return StageProfile{ipc, 0.05 * ipc, cache, 0.05 * cache, duration, jitter};
  };
  return {
      {StageId::N1_Init, stage(1.2, 800, 40, 4)},
      {StageId::N2_Sampling, stage(0.9, 2500, 60, 6)},
      {StageId::N3_Filtering, stage(1.6, 1500, 80, 8)},
      {StageId::N4_Encryption, stage(2.2, 4000, 90, 9)},
      {StageId::N5_Save, stage(0.6, 3000, 50, 5)},
      {StageId::N6_Exit, stage(1.0, 500, 170, 10)},
      {StageId::INJ_Foreign, stage(0.4, 6000, 120, 12)},
  };
}

std::vector<StageId> stage_sequence(RunMode mode) {
  using S = StageId;
  switch (mode) {
    case RunMode::Normal:
      return {S::N1_Init, S::N2_Sampling, S::N3_Filtering, S::N4_Encryption, S::N5_Save,
              S::N6_Exit};
    case RunMode::CodeInjection:
      return {S::N1_Init, S::N2_Sampling, S::INJ_Foreign, S::N6_Exit};
    case RunMode::NodeSkipping:
      return {S::N1_Init, S::N2_Sampling, S::N3_Filtering, S::N5_Save, S::N6_Exit};
  }
  return {};
}

std::optional<StageId> trigger_stage(std::string_view trigger_id) {
  static constexpr std::pair<std::string_view, StageId> kTriggers[] = {
      {"N1-entry", StageId::N1_Init},      {"N2-entry", StageId::N2_Sampling},
      {"N3-entry", StageId::N3_Filtering}, {"N4-entry", StageId::N4_Encryption},
      {"N5-entry", StageId::N5_Save},      {"N6-entry", StageId::N6_Exit},
  };
  for (const auto& [name, stage] : kTriggers) {
    if (name == trigger_id) return stage;
  }
  return std::nullopt;
}

SyntheticRun::SyntheticRun(const RunSpec& spec) {
  if (!(spec.input_variation >= 0.0) || spec.input_variation > 1.0) {
    throw Error(Errc::InvalidArgument, "input_variation must lie in [0, 1]");
  }
  Rng rng(spec.seed);
  const double drift = 0.1 * spec.input_variation;
  cumulative_.push_back(CounterReading{});
  for (StageId id : stage_sequence(spec.mode)) {
    auto it = spec.profiles.find(id);
    if (it == spec.profiles.end()) {
      throw Error(Errc::InvalidArgument,
                  "profile set lacks stage " + std::string(to_string(id)));
    }
    const StageProfile& p = it->second;
    check_profile(id, p);

    // Run-level drift models different inputs and parameters.
    const double duration_factor = 1.0 + drift * rng.symmetric();
    const double ipc_factor = 1.0 + drift * rng.symmetric();
    const double cache_factor = 1.0 + drift * rng.symmetric();
    const std::int64_t jitter = rng.symmetric_int(p.duration_jitter);
    const std::int64_t length = std::max<std::int64_t>(
        1, std::llround(p.duration * duration_factor) + jitter);

    segments_.push_back(StageSegment{id, cumulative_.size() - 1,
                                     static_cast<std::uint64_t>(length)});
    const double ipc_mean = p.mean_ipc * ipc_factor;
    const double ipc_sd = p.ipc_jitter * ipc_factor;
    const double cache_mean = p.mean_cache * cache_factor;
    const double cache_sd = p.cache_jitter * cache_factor;
    for (std::int64_t i = 0; i < length; ++i) {
      const double ipc = std::max(0.0, ipc_mean + ipc_sd * rng.normal());
      const double cache = std::max(0.0, cache_mean + cache_sd * rng.normal());
      CounterReading next = cumulative_.back();
      next.cycles += kCyclesPerInterval;
      next.instructions +=
          static_cast<std::uint64_t>(std::llround(ipc * static_cast<double>(kCyclesPerInterval)));
      next.cache_accesses += static_cast<std::uint64_t>(std::llround(cache));
      cumulative_.push_back(next);
    }
  }
}

std::optional<std::uint64_t> SyntheticRun::stage_entry(StageId stage) const {
  for (const auto& s : segments_) {
    if (s.stage == stage) return s.first_interval;
  }
  return std::nullopt;
}

std::optional<StageId> SyntheticRun::stage_at(std::uint64_t interval) const {
  for (const auto& s : segments_) {
    if (interval >= s.first_interval && interval < s.first_interval + s.length) return s.stage;
  }
  return std::nullopt;
}

CounterReading SyntheticRun::delta(std::uint64_t i) const {
  const auto& a = cumulative_.at(i);
  const auto& b = cumulative_.at(i + 1);
  return {b.instructions - a.instructions, b.cycles - a.cycles,
          b.cache_accesses - a.cache_accesses};
}

std::optional<CounterReading> SyntheticSource::read() {
  const std::uint64_t idx = origin_ + clock_.now_us() / kSimIntervalUs;
  if (idx > run_.total_intervals()) return std::nullopt;
  return run_.cumulative(idx);
}

std::string SyntheticSource::describe() const {
  return "synthetic: instructions, cycles, L1-D accesses (simulated)";
}

std::optional<TraceWindow> simulate_window(const RunSpec& spec, const MonitorConfig& cfg,
                                           std::string_view trigger_id) {
  const auto stage = trigger_stage(trigger_id);
  if (!stage) {
    throw Error(Errc::UnknownTrigger, "no simulated trigger '" + std::string(trigger_id) + "'");
  }
  const SyntheticRun run(spec);
  const auto entry = run.stage_entry(*stage);
  if (!entry) return std::nullopt;
  VirtualClock clock;
  SyntheticSource source(run, clock, *entry);
  return sample_window(source, clock, cfg, std::string(trigger_id));
}

std::vector<LabeledTrace> generate_dataset(std::uint64_t n_normal, std::uint64_t n_attack,
                                           std::uint64_t base_seed, double attack_mix,
                                           const DatasetOptions& opts) {
  if (!(attack_mix >= 0.0) || attack_mix > 1.0) {
    throw Error(Errc::InvalidArgument, "attack_mix must lie in [0, 1]");
  }
  const auto n_injection =
      static_cast<std::uint64_t>(std::llround(attack_mix * static_cast<double>(n_attack)));
  std::vector<LabeledTrace> out;
  out.reserve(n_normal + n_attack);
  for (std::uint64_t i = 0; i < n_normal + n_attack; ++i) {
    LabeledTrace t;
    t.seed = base_seed + i;
    RunSpec spec{RunMode::Normal, t.seed, opts.profiles, opts.input_variation};
    if (i >= n_normal) {
      t.label = Label::Attack;
      t.attack_mode =
          i - n_normal < n_injection ? AttackMode::CodeInjection : AttackMode::NodeSkipping;
      spec.mode = run_mode_of(*t.attack_mode);
    }
    auto window = simulate_window(spec, opts.monitor, opts.trigger_id);
    if (!window) {
      // The hijacked run never reached the trigger: nothing is monitored, so
      // the prover would answer with an empty, truncated window.
      window = TraceWindow{opts.trigger_id, opts.monitor.period_us, opts.monitor.duration_us,
                           true, {}};
    }
    t.window = std::move(*window);
    out.push_back(std::move(t));
  }
  return out;
}

std::string Manifest::resolve(const ManifestEntry& e) const {
  const fs::path p(e.path);
  return p.is_absolute() ? p.string() : (fs::path(directory) / p).string();
}

std::string write_dataset(const std::string& dir, const std::vector<LabeledTrace>& traces) {
  std::ostringstream manifest;
  manifest << "path,label,mode,seed\n";
  for (const auto& t : traces) {
    const std::string mode =
        t.attack_mode ? std::string(lfat::to_string(*t.attack_mode)) : "normal";
    const fs::path rel = fs::path(std::string(lfat::to_string(t.label))) / mode /
                         (std::to_string(t.seed) + ".csv");
    fs::create_directories(fs::path(dir) / rel.parent_path());
    write_trace_file((fs::path(dir) / rel).string(), t.window);
    manifest << rel.generic_string() << ',' << lfat::to_string(t.label) << ',' << mode << ','
             << t.seed << '\n';
  }
  fs::create_directories(dir);
  const std::string path = (fs::path(dir) / "manifest.csv").string();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write manifest " + path);
  out << manifest.str();
  if (!out) throw Error(Errc::IoError, "write failed for " + path);
  return path;
}

Manifest read_manifest(const std::string& manifest_path) {
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open manifest " + manifest_path);
  Manifest m;
  m.directory = fs::path(manifest_path).parent_path().string();
  if (m.directory.empty()) m.directory = ".";
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& msg) -> void {
    throw Error(Errc::FormatError,
                manifest_path + " line " + std::to_string(line_no) + ": " + msg);
  };
  if (!std::getline(in, line) || (++line_no, line != "path,label,mode,seed")) {
    line_no = 1;
    fail("expected header 'path,label,mode,seed'");
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
    if (cols.size() != 4) fail("expected 4 columns");
    ManifestEntry e;
    e.path = cols[0];
    try {
      e.label = parse_label(cols[1]);
    } catch (const Error&) {
      fail("unknown label '" + cols[1] + "'");
    }
    e.mode = cols[2];
    if (e.label == Label::Normal ? e.mode != "normal"
                                 : (e.mode != "code-injection" && e.mode != "node-skipping")) {
      fail("mode '" + e.mode + "' does not fit label '" + cols[1] + "'");
    }
    e.seed = parse_seed(cols[3], line_no);
    m.entries.push_back(std::move(e));
  }
  return m;
}

}  // namespace lfat::sim
