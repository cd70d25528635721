// Small instrumented workload for the perf backend: a few compute and
// memory phases, with a trigger signal at the entry of the second phase.

#include <chrono>
#include <cstdint>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include "lfat/prover.hpp"

namespace {

volatile std::uint64_t sink;

void compute_phase(std::chrono::milliseconds span) {
  const auto end = std::chrono::steady_clock::now() + span;
  std::uint64_t x = 88172645463325252ull;
  while (std::chrono::steady_clock::now() < end) {
    for (int i = 0; i < 4096; ++i) {
      x ^= x << 13;
      x ^= x >> 7;
      x ^= x << 17;
    }
  }
  sink = x;
}

void memory_phase(std::chrono::milliseconds span, std::size_t stride) {
  std::vector<std::uint32_t> buf(1 << 22);
  std::iota(buf.begin(), buf.end(), 0u);
  const auto end = std::chrono::steady_clock::now() + span;
  std::uint64_t acc = 0;
  std::size_t i = 0;
  while (std::chrono::steady_clock::now() < end) {
    for (int j = 0; j < 4096; ++j) {
      acc += buf[i];
      buf[i] = static_cast<std::uint32_t>(acc);
      i = (i + stride) % buf.size();
    }
  }
  sink = acc;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: lfat_demo_app <trigger-channel> [trigger-id] [--skip]\n";
    return 2;
  }
  const std::string channel = argv[1];
  const std::string trigger = argc > 2 ? argv[2] : "N2-entry";
  const bool skip = argc > 3 && std::string(argv[3]) == "--skip";

  compute_phase(std::chrono::milliseconds(50));
  try {
    lfat::prover::signal_trigger(channel, trigger);
  } catch (const std::exception& e) {
    std::cerr << "demo app: " << e.what() << '\n';
    return 1;
  }
  memory_phase(std::chrono::milliseconds(120), 16);
  if (!skip) compute_phase(std::chrono::milliseconds(120));
  memory_phase(std::chrono::milliseconds(150), 1031);
  compute_phase(std::chrono::milliseconds(100));
  return 0;
}
