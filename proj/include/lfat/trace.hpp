#ifndef LFAT_TRACE_HPP_
#define LFAT_TRACE_HPP_

// Trace data model: per-interval counter deltas for one attestation window,
// the two-feature summary handed to the detector, and the CSV trace codec.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lfat/error.hpp"

namespace lfat {

inline constexpr std::size_t kMaxIdLength = 64;
inline constexpr double kDefaultIpcSanityBound = 16.0;

struct CounterSample {
  std::uint64_t t_offset_us = 0;
  std::uint64_t d_instructions = 0;
  std::uint64_t d_cycles = 0;
  std::uint64_t d_cache_accesses = 0;

  friend bool operator==(const CounterSample&, const CounterSample&) = default;
};

struct TraceWindow {
  std::string trigger_id;
  std::uint64_t period_us = 1000;
  std::uint64_t duration_us = 300000;
  bool truncated = false;
  std::vector<CounterSample> samples;

  /// Number of samples a completed window holds.
  std::uint64_t expected_samples() const { return period_us == 0 ? 0 : duration_us / period_us; }

  /// A window is complete when it was not cut short and holds exactly the
  /// expected number of samples.
  bool complete() const { return !truncated && samples.size() == expected_samples(); }

  friend bool operator==(const TraceWindow&, const TraceWindow&) = default;
};

struct FeatureVector {
  double mean_ipc = 0.0;
  double mean_cache_accesses = 0.0;

  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

enum class Label { Normal, Attack };
enum class AttackMode { CodeInjection, NodeSkipping };

struct LabeledTrace {
  TraceWindow window;
  Label label = Label::Normal;
  std::optional<AttackMode> attack_mode;
  std::uint64_t seed = 0;
};

// Identifiers travel inside the CSV preamble and the wire format, so they are
// restricted to printable ASCII without whitespace or '='.
bool valid_identifier(std::string_view id);

/// Throws Errc::InvalidArgument describing the first violated invariant.
void validate(const TraceWindow& window);

/// Instructions per cycle for one interval; an interval with no cycles
/// carries no throughput and reports 0.
constexpr double ipc_from_deltas(std::uint64_t d_instructions, std::uint64_t d_cycles) {
  if (d_cycles == 0) return 0.0;
  return static_cast<double>(d_instructions) / static_cast<double>(d_cycles);
}

/// Throws Errc::EmptyWindow when the window has no samples.
FeatureVector compute_features(const TraceWindow& window);

/// Throws Errc::InvalidArgument when a field is non-finite, negative, or the
/// IPC exceeds `ipc_bound`.
void validate(const FeatureVector& features, double ipc_bound = kDefaultIpcSanityBound);

std::string encode_trace(const TraceWindow& window);

/// Throws Errc::FormatError with a "line L, column C" location.
TraceWindow decode_trace(std::string_view bytes);

TraceWindow read_trace_file(const std::string& path);
void write_trace_file(const std::string& path, const TraceWindow& window);

std::string_view to_string(Label label);
std::string_view to_string(AttackMode mode);
Label parse_label(std::string_view text);
AttackMode parse_attack_mode(std::string_view text);

}  // namespace lfat

#endif  // LFAT_TRACE_HPP_
