#ifndef LFAT_TESTS_SUPPORT_HPP_
#define LFAT_TESTS_SUPPORT_HPP_

#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>

#include "lfat/error.hpp"
#include "lfat/trace.hpp"

#define EXPECT_ERRC(stmt, errc)                                   \
  do {                                                            \
    try {                                                         \
      stmt;                                                       \
      ADD_FAILURE() << "expected " << ::lfat::to_string(errc);    \
    } catch (const ::lfat::Error& e) {                            \
      EXPECT_EQ(e.code(), errc) << e.what();                      \
    }                                                             \
  } while (0)

namespace lfat::testing {

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "lfat-test-XXXXXX").string();
    path_ = ::mkdtemp(tmpl.data());
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline TraceWindow random_window(std::uint64_t seed, std::size_t n = 300) {
  std::mt19937_64 rng(seed);
  TraceWindow w;
  w.trigger_id = "N2-entry";
  w.period_us = 1000;
  w.duration_us = 1000 * std::max<std::size_t>(n, 1);
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < n; ++i) {
    t += 1 + rng() % 1500;
    w.samples.push_back({t, rng() % 10'000'000, 1 + rng() % 5'000'000, rng() % 10'000});
  }
  return w;
}

}  // namespace lfat::testing

#endif  // LFAT_TESTS_SUPPORT_HPP_
