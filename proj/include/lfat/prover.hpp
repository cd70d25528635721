#ifndef LFAT_PROVER_HPP_
#define LFAT_PROVER_HPP_

// Prover side: the attestation service that accepts challenges and arms
// trigger points, and the glue that hands a fired trigger to the monitoring
// service and signs the resulting window.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <sys/types.h>
#include <variant>
#include <vector>

#include "lfat/monitor.hpp"
#include "lfat/net.hpp"
#include "lfat/protocol.hpp"
#include "lfat/workload.hpp"

namespace lfat::prover {

inline constexpr std::size_t kMaxTriggerLine = 256;

/// What woke a waiting attestation: the instrumented application hit the
/// trigger point, or it exited without reaching it.
struct TriggerEvent {
  enum class Kind { Fired, TargetExited } kind = Kind::Fired;
  std::optional<pid_t> pid;  // signalling process, when known
};

class TriggerRegistry {
 public:
  explicit TriggerRegistry(std::vector<std::string> known_triggers);

  /// Arms `challenge.trigger_id`. Throws Errc::UnknownTrigger or
  /// Errc::AlreadyArmed.
  void arm(const proto::Challenge& challenge);

  /// Called for every trigger signal from the application. Returns true if
  /// the trigger was armed (it is disarmed and its waiter released); signals
  /// on disarmed or unknown triggers are counted and ignored.
  bool signal(const std::string& trigger_id, std::optional<pid_t> pid = std::nullopt);

  /// Releases the waiter with TargetExited if the trigger is still armed.
  void target_exited(const std::string& trigger_id);

  /// Blocks until the armed trigger fires or `timeout` elapses; disarms on
  /// timeout. nullopt means no event arrived.
  std::optional<TriggerEvent> wait(const std::string& trigger_id,
                                   std::chrono::milliseconds timeout);

  bool is_armed(const std::string& trigger_id) const;
  std::uint64_t ignored_signals() const { return ignored_.load(); }
  std::uint64_t fired_signals() const { return fired_.load(); }
  const std::vector<std::string>& known() const { return known_; }

 private:
  struct Slot {
    bool armed = false;
    std::optional<TriggerEvent> event;
  };

  std::vector<std::string> known_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::string, Slot> slots_;
  std::atomic<std::uint64_t> ignored_{0};
  std::atomic<std::uint64_t> fired_{0};
};

/// Signs `window` for `challenge`: echoes the nonce and attaches the tag.
/// Throws Errc::FieldTooLong for over-long identifiers.
proto::AttestationResponse build_response(TraceWindow window, const proto::Challenge& challenge,
                                          const proto::Key& key, const std::string& prover_id);

enum class Backend { Synthetic, Perf };

std::string_view to_string(Backend b);
Backend parse_backend(std::string_view text);

struct ProverConfig {
  std::string listen = "127.0.0.1:7000";
  std::string key_file;
  std::string prover_id = "prover-0";
  std::string trigger_channel = "/tmp/lfat-trigger.sock";
  Backend backend = Backend::Synthetic;
  std::vector<std::string> triggers{std::string(sim::kDefaultTrigger)};
  // Synthetic backend: the simulated application each round runs.
  sim::RunMode workload = sim::RunMode::Normal;
  std::uint64_t seed = 42;
  bool realtime = false;
  // Extra wait for the trigger beyond the window length.
  std::uint64_t grace_ms = proto::kGraceMs;
};

/// Opens a counter source on a process (the hardware backend). Replaceable
/// for tests.
using PerfSourceFactory = std::function<std::unique_ptr<CounterSource>(pid_t)>;

using AttestResult = std::variant<proto::AttestationResponse, proto::ErrorReport>;

class ProverAgent {
 public:
  ProverAgent(ProverConfig cfg, proto::Key key, PerfSourceFactory perf_factory = {});

  /// One full round for `challenge`: arm, wait for the trigger, sample,
  /// sign. Failures come back as an ErrorReport, never as an exception.
  AttestResult attest(const proto::Challenge& challenge);

  /// Serves challenge connections until stop() or `max_rounds` rounds
  /// (0 = unlimited). Each connection carries one challenge and one reply.
  void serve(net::Listener& listener, std::size_t max_rounds = 0);

  /// Accepts trigger-channel clients: each line "<trigger_id>\n" is a
  /// signal from the process on the other end of the socket.
  void serve_triggers(net::Listener& channel);

  void stop();

  TriggerRegistry& registry() { return registry_; }
  const ProverConfig& config() const { return cfg_; }
  std::uint64_t rounds() const { return rounds_.load(); }

 private:
  AttestResult attest_synthetic(const proto::Challenge& challenge, std::uint64_t round);
  AttestResult attest_perf(const proto::Challenge& challenge);
  void handle_connection(net::Stream stream);

  ProverConfig cfg_;
  proto::Key key_;
  PerfSourceFactory perf_factory_;
  TriggerRegistry registry_;
  std::atomic<std::uint64_t> rounds_{0};
  std::atomic<bool> stopping_{false};
  std::mutex listeners_mu_;
  std::vector<net::Listener*> listeners_;
};

/// Instrumentation hook for applications: announces that `trigger_id` was
/// reached by writing "<trigger_id>\n" to the agent's trigger channel.
void signal_trigger(const std::string& channel_path, const std::string& trigger_id);

/// Hardware counters of `pid` and all its threads via perf_event_open:
/// instructions, cpu-cycles and L1-D accesses (loads plus stores where the
/// CPU exposes store accesses, loads only otherwise; see describe()).
/// Throws Errc::SourceFailure when the events cannot be opened.
std::unique_ptr<CounterSource> open_perf_source(pid_t pid);

}  // namespace lfat::prover

#endif  // LFAT_PROVER_HPP_
