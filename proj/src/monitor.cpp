#include "lfat/monitor.hpp"

#include <thread>

namespace lfat {

std::uint64_t SteadySamplingClock::now_us() const {
  using namespace std::chrono;
  return static_cast<std::uint64_t>(
      duration_cast<microseconds>(steady_clock::now() - origin_).count());
}

std::uint64_t SteadySamplingClock::wait_until(std::uint64_t offset_us) {
  std::this_thread::sleep_until(origin_ + std::chrono::microseconds(offset_us));
  return now_us();
}

TraceWindow sample_window(CounterSource& source, SamplingClock& clock, const MonitorConfig& cfg,
                          const std::string& trigger_id, SampleStatus* status) {
  TraceWindow w;
  w.trigger_id = trigger_id;
  w.period_us = cfg.period_us;
  w.duration_us = cfg.duration_us;
  validate(w);

  SampleStatus outcome = SampleStatus::Complete;
  const std::uint64_t count = w.expected_samples();
  w.samples.reserve(count);
  clock.start();

  std::optional<CounterReading> prev;
  try {
    prev = source.read();
  } catch (const Error&) {
    outcome = SampleStatus::SourceFailure;
  }
  if (!prev && outcome == SampleStatus::Complete) outcome = SampleStatus::TargetExited;

  for (std::uint64_t i = 1; prev && i <= count; ++i) {
    std::uint64_t at = clock.wait_until(i * cfg.period_us);
    std::optional<CounterReading> cur;
    try {
      cur = source.read();
    } catch (const Error&) {
      outcome = SampleStatus::SourceFailure;
      break;
    }
    if (!cur) {
      outcome = SampleStatus::TargetExited;
      break;
    }
    if (cur->instructions < prev->instructions || cur->cycles < prev->cycles ||
        cur->cache_accesses < prev->cache_accesses) {
      outcome = SampleStatus::SourceFailure;  // counters went backwards
      break;
    }
    if (!w.samples.empty() && at <= w.samples.back().t_offset_us) {
      at = w.samples.back().t_offset_us + 1;
    }
    w.samples.push_back(CounterSample{at, cur->instructions - prev->instructions,
                                      cur->cycles - prev->cycles,
                                      cur->cache_accesses - prev->cache_accesses});
    prev = cur;
  }
  w.truncated = w.samples.size() < count;
  if (status) *status = outcome;
  return w;
}

}  // namespace lfat
