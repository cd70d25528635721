// Hardware counter backend over Linux perf_event_open(2).
//
// Each thread of the target gets one fd per event (inherit=1, so threads it
// spawns later are folded into its counts). Threads that appear after the
// source was opened are picked up on the next read. Cache accesses bind
// L1-D read accesses plus L1-D write accesses; CPUs that do not expose the
// write event (most AMD parts) fall back to reads only, and describe() says
// which binding is active.

#include <linux/perf_event.h>
#include <signal.h>
#include <sys/ioctl.h>
#include <sys/syscall.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "lfat/prover.hpp"

namespace lfat::prover {

namespace {

struct EventSpec {
  std::uint32_t type;
  std::uint64_t config;
};

constexpr std::uint64_t l1d(std::uint64_t op) {
  return PERF_COUNT_HW_CACHE_L1D | (op << 8) | (PERF_COUNT_HW_CACHE_RESULT_ACCESS << 16);
}

constexpr EventSpec kInstructions{PERF_TYPE_HARDWARE, PERF_COUNT_HW_INSTRUCTIONS};
constexpr EventSpec kCycles{PERF_TYPE_HARDWARE, PERF_COUNT_HW_CPU_CYCLES};
constexpr EventSpec kL1dReads{PERF_TYPE_HW_CACHE, l1d(PERF_COUNT_HW_CACHE_OP_READ)};
constexpr EventSpec kL1dWrites{PERF_TYPE_HW_CACHE, l1d(PERF_COUNT_HW_CACHE_OP_WRITE)};

int open_event(const EventSpec& ev, pid_t tid) {
  perf_event_attr attr{};
  attr.size = sizeof attr;
  attr.type = ev.type;
  attr.config = ev.config;
  attr.inherit = 1;
  attr.exclude_kernel = 1;
  attr.exclude_hv = 1;
  attr.read_format = PERF_FORMAT_TOTAL_TIME_ENABLED | PERF_FORMAT_TOTAL_TIME_RUNNING;
  return static_cast<int>(::syscall(SYS_perf_event_open, &attr, tid, -1, -1, 0));
}

std::set<pid_t> list_threads(pid_t pid) {
  std::set<pid_t> out;
  std::error_code ec;
  for (const auto& e :
       std::filesystem::directory_iterator("/proc/" + std::to_string(pid) + "/task", ec)) {
    try {
      out.insert(static_cast<pid_t>(std::stol(e.path().filename().string())));
    } catch (const std::exception&) {
    }
  }
  return out;
}

bool process_alive(pid_t pid) {
  if (::kill(pid, 0) != 0 && errno == ESRCH) return false;
  std::ifstream stat("/proc/" + std::to_string(pid) + "/stat");
  if (!stat) return false;
  std::string line;
  std::getline(stat, line);
  const auto close = line.rfind(')');
  // Zombies have exited; only the parent has not reaped them yet.
  return close == std::string::npos || close + 2 >= line.size() || line[close + 2] != 'Z';
}

class PerfCounterSource final : public CounterSource {
 public:
  explicit PerfCounterSource(pid_t pid) : pid_(pid) {
    const auto threads = list_threads(pid);
    if (threads.empty()) {
      throw Error(Errc::SourceFailure, "process " + std::to_string(pid) + " not found");
    }
    // Probe the optional store event once on the main thread.
    const int probe = open_event(kL1dWrites, pid);
    with_writes_ = probe >= 0;
    if (probe >= 0) ::close(probe);
    for (pid_t tid : threads) attach(tid, /*required=*/tid == pid);
    if (fds_.empty()) {
      throw Error(Errc::SourceFailure, "perf_event_open failed for process " +
                                           std::to_string(pid) + ": " + std::strerror(errno));
    }
  }

  ~PerfCounterSource() override {
    for (const auto& t : fds_) {
      for (int fd : t.fd) {
        if (fd >= 0) ::close(fd);
      }
    }
  }

  std::optional<CounterReading> read() override {
    if (!process_alive(pid_)) return std::nullopt;
    for (pid_t tid : list_threads(pid_)) {
      if (!attached_.count(tid)) attach(tid, false);
    }
    CounterReading r;
    for (const auto& t : fds_) {
      r.instructions += read_scaled(t.fd[0]);
      r.cycles += read_scaled(t.fd[1]);
      r.cache_accesses += read_scaled(t.fd[2]);
      if (t.fd[3] >= 0) r.cache_accesses += read_scaled(t.fd[3]);
    }
    // Multiplexing estimates can dip; keep the cumulative view monotone.
    r.instructions = std::max(r.instructions, last_.instructions);
    r.cycles = std::max(r.cycles, last_.cycles);
    r.cache_accesses = std::max(r.cache_accesses, last_.cache_accesses);
    last_ = r;
    return r;
  }

  std::string describe() const override {
    return std::string("perf_event: instructions, cpu-cycles, ") +
           (with_writes_ ? "L1-dcache-loads + L1-dcache-stores" : "L1-dcache-loads");
  }

 private:
  struct ThreadFds {
    int fd[4] = {-1, -1, -1, -1};
  };

  void attach(pid_t tid, bool required) {
    ThreadFds t;
    const EventSpec specs[4] = {kInstructions, kCycles, kL1dReads, kL1dWrites};
    for (int i = 0; i < 4; ++i) {
      if (i == 3 && !with_writes_) break;
      t.fd[i] = open_event(specs[i], tid);
      if (t.fd[i] < 0) {
        const int err = errno;
        for (int j = 0; j < i; ++j) ::close(t.fd[j]);
        if (required) {
          throw Error(Errc::SourceFailure, "perf_event_open failed for thread " +
                                               std::to_string(tid) + ": " + std::strerror(err));
        }
        return;  // thread vanished between listing and opening
      }
    }
    attached_.insert(tid);
    fds_.push_back(t);
  }

  static std::uint64_t read_scaled(int fd) {
    std::uint64_t buf[3] = {0, 0, 0};  // value, time_enabled, time_running
    if (::read(fd, buf, sizeof buf) != static_cast<ssize_t>(sizeof buf)) {
      throw Error(Errc::SourceFailure, std::string("perf counter read failed: ") +
                                           std::strerror(errno));
    }
    if (buf[2] == 0) return 0;
    if (buf[2] == buf[1]) return buf[0];
    return static_cast<std::uint64_t>(static_cast<long double>(buf[0]) * buf[1] / buf[2]);
  }

  pid_t pid_;
  bool with_writes_ = false;
  std::vector<ThreadFds> fds_;
  std::set<pid_t> attached_;
  CounterReading last_;
};

}  // namespace

std::unique_ptr<CounterSource> open_perf_source(pid_t pid) {
  return std::make_unique<PerfCounterSource>(pid);
}

}  // namespace lfat::prover
