#ifndef LFAT_TESTS_SIM_ORACLE_HPP_
#define LFAT_TESTS_SIM_ORACLE_HPP_

// Straight transcription of the simulator's documented generative model,
// producing per-interval deltas directly (no cumulative stream, no sampling
// loop). Used to re-derive window features independently.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace oracle {

struct Stage {
  double ipc, cache;
  int duration, jitter;
};

struct Interval {
  std::uint64_t instr, cycles, cache;
  int stage;
};

// stages: (stage tag, profile) in visiting order; 5% jitter on both means.
inline std::vector<Interval> simulate(const std::vector<std::pair<int, Stage>>& stages,
                                      std::uint64_t seed, double input_variation) {
  std::mt19937_64 eng(seed);
  auto uni = [&] { return double(eng() >> 11) / 9007199254740992.0; };
  auto gauss = [&] {
    double a = 1.0 - uni(), b = uni();
    return std::sqrt(-2.0 * std::log(a)) * std::cos(2.0 * 3.14159265358979323846 * b);
  };
  const double drift = input_variation / 10.0;
  std::vector<Interval> out;
  for (const auto& [tag, s] : stages) {
    const double fd = 1.0 + drift * (2.0 * uni() - 1.0);
    const double fi = 1.0 + drift * (2.0 * uni() - 1.0);
    const double fc = 1.0 + drift * (2.0 * uni() - 1.0);
    const long long j = static_cast<long long>(eng() % (2ull * s.jitter + 1)) - s.jitter;
    long long len = std::llround(s.duration * fd) + j;
    if (len < 1) len = 1;
    for (long long i = 0; i < len; ++i) {
      double ipc = s.ipc * fi + 0.05 * s.ipc * fi * gauss();
      double cache = s.cache * fc + 0.05 * s.cache * fc * gauss();
      if (ipc < 0) ipc = 0;
      if (cache < 0) cache = 0;
      out.push_back({std::uint64_t(std::llround(ipc * 3700000.0)), 3700000,
                     std::uint64_t(std::llround(cache)), tag});
    }
  }
  return out;
}

}  // namespace oracle

#endif  // LFAT_TESTS_SIM_ORACLE_HPP_
