#ifndef LFAT_MONITOR_HPP_
#define LFAT_MONITOR_HPP_

// Monitoring service: turns a cumulative counter source into a fixed-rate
// window of per-interval deltas.

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>

#include "lfat/trace.hpp"

namespace lfat {

/// Cumulative counts for the target process, summed over all its threads.
struct CounterReading {
  std::uint64_t instructions = 0;
  std::uint64_t cycles = 0;
  std::uint64_t cache_accesses = 0;
};

class CounterSource {
 public:
  virtual ~CounterSource() = default;
  /// Current cumulative counts; nullopt once the target process has exited.
  /// Throws Errc::SourceFailure when the counters cannot be read.
  virtual std::optional<CounterReading> read() = 0;
  /// Which hardware (or simulated) events back the three counters.
  virtual std::string describe() const = 0;
};

/// Time base for one sampling run. Offsets are microseconds since start().
class SamplingClock {
 public:
  virtual ~SamplingClock() = default;
  virtual void start() = 0;
  virtual std::uint64_t now_us() const = 0;
  /// Blocks until `offset_us` and returns the offset actually reached.
  virtual std::uint64_t wait_until(std::uint64_t offset_us) = 0;
};

/// Simulated time: waiting jumps straight to the target offset.
class VirtualClock final : public SamplingClock {
 public:
  void start() override { now_ = 0; }
  std::uint64_t now_us() const override { return now_; }
  std::uint64_t wait_until(std::uint64_t offset_us) override {
    if (offset_us > now_) now_ = offset_us;
    return now_;
  }

 private:
  std::uint64_t now_ = 0;
};

class SteadySamplingClock final : public SamplingClock {
 public:
  void start() override { origin_ = std::chrono::steady_clock::now(); }
  std::uint64_t now_us() const override;
  std::uint64_t wait_until(std::uint64_t offset_us) override;

 private:
  std::chrono::steady_clock::time_point origin_ = std::chrono::steady_clock::now();
};

struct MonitorConfig {
  std::uint64_t period_us = 1000;
  std::uint64_t duration_us = 300000;
};

enum class SampleStatus { Complete, TargetExited, SourceFailure };

/// Takes an initial reading, then one reading per period until
/// floor(duration/period) samples are stored. Sample i holds the deltas
/// between readings i and i+1 and the offset at which reading i+1 was taken.
/// If the target exits or the source fails the partial window is returned
/// with truncated set; `status` (optional) reports which.
TraceWindow sample_window(CounterSource& source, SamplingClock& clock, const MonitorConfig& cfg,
                          const std::string& trigger_id, SampleStatus* status = nullptr);

}  // namespace lfat

#endif  // LFAT_MONITOR_HPP_
