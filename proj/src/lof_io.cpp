// Model file layout (text, LF line endings, doubles as %.17g):
//
//   LFAT-LOF-MODEL 1
//   dims 2
//   k <k>
//   n <n>
//   calibration_quantile <q>
//   threshold <t>
//   degenerate <0|1>
//   mean <m0> <m1>
//   std <s0> <s1>
//   points x0 x1 k_distance lrd
//   <n lines of four doubles>
//   end

#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "lfat/lof.hpp"

namespace lfat::lof {

namespace {

constexpr const char* kMagic = "LFAT-LOF-MODEL";
constexpr int kVersion = 1;

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class LineReader {
 public:
  explicit LineReader(std::istream& in) : in_(in) {}

  std::vector<std::string> fields() {
    std::string line;
    if (!std::getline(in_, line)) fail("unexpected end of model file");
    ++line_no_;
    std::vector<std::string> out;
    std::istringstream ss(line);
    for (std::string tok; ss >> tok;) out.push_back(tok);
    return out;
  }

  std::vector<std::string> keyed(const std::string& key, std::size_t values) {
    auto f = fields();
    if (f.size() != values + 1 || f[0] != key) {
      fail("expected '" + key + "' with " + std::to_string(values) + " value(s)");
    }
    return f;
  }

  double to_double(const std::string& s) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) fail("bad number '" + s + "'");
    return v;
  }

  std::size_t to_size(const std::string& s) {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) fail("bad integer '" + s + "'");
    return v;
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw Error(Errc::FormatError, "model line " + std::to_string(line_no_) + ": " + msg);
  }

 private:
  std::istream& in_;
  std::size_t line_no_ = 0;
};

}  // namespace

void LofModel::save(std::ostream& out) const {
  const auto& pts = index_.points();
  out << kMagic << ' ' << kVersion << '\n';
  out << "dims 2\n";
  out << "k " << index_.k() << '\n';
  out << "n " << pts.size() << '\n';
  out << "calibration_quantile " << fmt_double(quantile_) << '\n';
  out << "threshold " << fmt_double(threshold_) << '\n';
  out << "degenerate " << (degenerate_ ? 1 : 0) << '\n';
  out << "mean " << fmt_double(stats_.mean[0]) << ' ' << fmt_double(stats_.mean[1]) << '\n';
  out << "std " << fmt_double(stats_.std[0]) << ' ' << fmt_double(stats_.std[1]) << '\n';
  out << "points x0 x1 k_distance lrd\n";
  for (std::size_t i = 0; i < pts.size(); ++i) {
    out << fmt_double(pts[i][0]) << ' ' << fmt_double(pts[i][1]) << ' '
        << fmt_double(index_.k_distances()[i]) << ' ' << fmt_double(index_.lrds()[i]) << '\n';
  }
  out << "end\n";
}

LofModel LofModel::load(std::istream& in) {
  LineReader r(in);
  auto magic = r.fields();
  if (magic.size() != 2 || magic[0] != kMagic) r.fail("not an LFAT LOF model file");
  if (magic[1] != std::to_string(kVersion)) r.fail("unsupported model version " + magic[1]);
  if (r.keyed("dims", 1)[1] != "2") r.fail("only 2-dimensional models are supported");
  const std::size_t k = r.to_size(r.keyed("k", 1)[1]);
  const std::size_t n = r.to_size(r.keyed("n", 1)[1]);
  const double quantile = r.to_double(r.keyed("calibration_quantile", 1)[1]);
  const double threshold = r.to_double(r.keyed("threshold", 1)[1]);
  const auto degenerate = r.keyed("degenerate", 1)[1];
  if (degenerate != "0" && degenerate != "1") r.fail("degenerate must be 0 or 1");
  StandardizationStats stats;
  auto mean = r.keyed("mean", 2);
  auto sd = r.keyed("std", 2);
  for (std::size_t d = 0; d < 2; ++d) {
    stats.mean[d] = r.to_double(mean[d + 1]);
    stats.std[d] = r.to_double(sd[d + 1]);
  }
  auto header = r.fields();
  if (header.size() != 5 || header[0] != "points") r.fail("expected points header");

  std::vector<Point<2>> points;
  std::vector<double> kd, lrd;
  points.reserve(n);
  kd.reserve(n);
  lrd.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto f = r.fields();
    if (f.size() != 4) r.fail("point rows need 4 values");
    points.push_back({r.to_double(f[0]), r.to_double(f[1])});
    kd.push_back(r.to_double(f[2]));
    lrd.push_back(r.to_double(f[3]));
  }
  auto end = r.fields();
  if (end.size() != 1 || end[0] != "end") r.fail("expected 'end'");

  try {
    return LofModel(LofIndex<2>::restore(std::move(points), k, std::move(kd), std::move(lrd)),
                    stats, threshold, quantile, degenerate == "1");
  } catch (const Error& e) {
    throw Error(Errc::FormatError, std::string("inconsistent model file: ") + e.what());
  }
}

void LofModel::save_file(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write model file " + path);
  save(out);
  if (!out) throw Error(Errc::IoError, "write failed for " + path);
}

LofModel LofModel::load_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open model file " + path);
  return load(in);
}

}  // namespace lfat::lof
