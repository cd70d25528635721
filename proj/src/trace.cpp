#include "lfat/trace.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace lfat {

namespace {

constexpr std::string_view kCsvHeader = "t_offset_us,d_instructions,d_cycles,d_cache_accesses";

[[noreturn]] void format_error(std::size_t line, std::size_t column, const std::string& msg) {
  std::ostringstream os;
  os << "line " << line << ", column " << column << ": " << msg;
  throw Error(Errc::FormatError, os.str());
}

std::uint64_t parse_u64(std::string_view text, std::size_t line, std::size_t column,
                        std::string_view what) {
  std::uint64_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) {
    format_error(line, column, "expected unsigned integer for " + std::string(what) + ", got '" +
                                   std::string(text) + "'");
  }
  return value;
}

// Parses "<key>=<value>" starting at `pos` and returns the value; advances
// `pos` past the token and one separating space if present.
std::string_view preamble_field(std::string_view line, std::size_t& pos, std::string_view key,
                                std::size_t line_no) {
  if (line.substr(pos, key.size()) != key || pos + key.size() >= line.size() ||
      line[pos + key.size()] != '=') {
    format_error(line_no, pos + 1, "expected '" + std::string(key) + "='");
  }
  std::size_t start = pos + key.size() + 1;
  std::size_t end = line.find(' ', start);
  if (end == std::string_view::npos) end = line.size();
  pos = end < line.size() ? end + 1 : end;
  return line.substr(start, end - start);
}

}  // namespace

bool valid_identifier(std::string_view id) {
  if (id.empty() || id.size() > kMaxIdLength) return false;
  for (char c : id) {
    auto u = static_cast<unsigned char>(c);
    if (u <= 0x20 || u >= 0x7f || c == '=' || c == ',') return false;
  }
  return true;
}

void validate(const TraceWindow& w) {
  if (!valid_identifier(w.trigger_id)) {
    throw Error(Errc::InvalidArgument, "trigger_id must be 1-64 printable non-space characters");
  }
  if (w.period_us == 0) throw Error(Errc::InvalidArgument, "period_us must be > 0");
  if (w.duration_us < w.period_us) {
    throw Error(Errc::InvalidArgument, "duration_us must be >= period_us");
  }
  if (w.samples.size() > w.expected_samples()) {
    throw Error(Errc::InvalidArgument, "window holds more samples than duration/period");
  }
  if (!w.truncated && w.samples.size() != w.expected_samples() && !w.samples.empty()) {
    throw Error(Errc::InvalidArgument, "incomplete window not flagged truncated");
  }
  for (std::size_t i = 1; i < w.samples.size(); ++i) {
    if (w.samples[i].t_offset_us <= w.samples[i - 1].t_offset_us) {
      throw Error(Errc::InvalidArgument, "t_offset values must be strictly increasing");
    }
  }
}

FeatureVector compute_features(const TraceWindow& window) {
  if (window.samples.empty()) throw Error(Errc::EmptyWindow, "window has no samples");
  double ipc_sum = 0.0;
  long double cache_sum = 0.0L;  // exact for integer totals below 2^64
  for (const auto& s : window.samples) {
    ipc_sum += ipc_from_deltas(s.d_instructions, s.d_cycles);
    cache_sum += static_cast<long double>(s.d_cache_accesses);
  }
  const auto n = static_cast<double>(window.samples.size());
  return FeatureVector{ipc_sum / n, static_cast<double>(cache_sum / n)};
}

void validate(const FeatureVector& f, double ipc_bound) {
  if (!std::isfinite(f.mean_ipc) || !std::isfinite(f.mean_cache_accesses)) {
    throw Error(Errc::InvalidArgument, "feature vector has non-finite entries");
  }
  if (f.mean_ipc < 0.0 || f.mean_cache_accesses < 0.0) {
    throw Error(Errc::InvalidArgument, "feature vector has negative entries");
  }
  if (f.mean_ipc > ipc_bound) {
    throw Error(Errc::InvalidArgument, "mean IPC exceeds sanity bound");
  }
}

std::string encode_trace(const TraceWindow& w) {
  std::string out;
  out.reserve(96 + w.samples.size() * 40);
  out += "# trigger_id=" + w.trigger_id + " period_us=" + std::to_string(w.period_us) +
         " duration_us=" + std::to_string(w.duration_us) +
         " truncated=" + (w.truncated ? "1" : "0") + "\n";
  out += kCsvHeader;
  out += '\n';
  for (const auto& s : w.samples) {
    out += std::to_string(s.t_offset_us);
    out += ',';
    out += std::to_string(s.d_instructions);
    out += ',';
    out += std::to_string(s.d_cycles);
    out += ',';
    out += std::to_string(s.d_cache_accesses);
    out += '\n';
  }
  return out;
}

TraceWindow decode_trace(std::string_view bytes) {
  TraceWindow w;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  auto next_line = [&](std::string_view& line) {
    if (pos >= bytes.size()) return false;
    std::size_t end = bytes.find('\n', pos);
    if (end == std::string_view::npos) end = bytes.size();
    line = bytes.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') format_error(line_no, line.size(), "CR line ending");
    return true;
  };

  std::string_view line;
  if (!next_line(line)) format_error(1, 1, "missing preamble");
  if (line.substr(0, 2) != "# ") format_error(line_no, 1, "preamble must start with '# '");
  std::size_t p = 2;
  w.trigger_id = std::string(preamble_field(line, p, "trigger_id", line_no));
  if (!valid_identifier(w.trigger_id)) format_error(line_no, 3, "invalid trigger_id");
  w.period_us = parse_u64(preamble_field(line, p, "period_us", line_no), line_no, p, "period_us");
  w.duration_us =
      parse_u64(preamble_field(line, p, "duration_us", line_no), line_no, p, "duration_us");
  auto truncated = preamble_field(line, p, "truncated", line_no);
  if (truncated != "0" && truncated != "1") format_error(line_no, p, "truncated must be 0 or 1");
  w.truncated = truncated == "1";
  if (p != line.size()) format_error(line_no, p + 1, "trailing preamble content");
  if (w.period_us == 0) format_error(line_no, 1, "period_us must be > 0");
  if (w.duration_us < w.period_us) format_error(line_no, 1, "duration_us must be >= period_us");

  if (!next_line(line)) format_error(line_no + 1, 1, "missing CSV header");
  if (line != kCsvHeader) format_error(line_no, 1, "unexpected CSV header");

  while (next_line(line)) {
    CounterSample s;
    std::uint64_t* fields[] = {&s.t_offset_us, &s.d_instructions, &s.d_cycles,
                               &s.d_cache_accesses};
    constexpr std::string_view names[] = {"t_offset_us", "d_instructions", "d_cycles",
                                          "d_cache_accesses"};
    std::size_t start = 0;
    for (std::size_t f = 0; f < 4; ++f) {
      std::size_t end = f < 3 ? line.find(',', start) : line.size();
      if (end == std::string_view::npos) format_error(line_no, line.size() + 1, "too few fields");
      *fields[f] = parse_u64(line.substr(start, end - start), line_no, start + 1, names[f]);
      start = end + 1;
    }
    if (!w.samples.empty() && s.t_offset_us <= w.samples.back().t_offset_us) {
      format_error(line_no, 1, "t_offset_us not strictly increasing");
    }
    w.samples.push_back(s);
  }
  if (w.samples.size() > w.expected_samples()) {
    format_error(line_no, 1, "more samples than duration_us / period_us");
  }
  return w;
}

TraceWindow read_trace_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open trace file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return decode_trace(buf.str());
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

void write_trace_file(const std::string& path, const TraceWindow& window) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write trace file " + path);
  out << encode_trace(window);
  if (!out) throw Error(Errc::IoError, "write failed for " + path);
}

std::string_view to_string(Label label) { return label == Label::Normal ? "normal" : "attack"; }

std::string_view to_string(AttackMode mode) {
  return mode == AttackMode::CodeInjection ? "code-injection" : "node-skipping";
}

Label parse_label(std::string_view text) {
  if (text == "normal") return Label::Normal;
  if (text == "attack") return Label::Attack;
  throw Error(Errc::FormatError, "unknown label '" + std::string(text) + "'");
}

AttackMode parse_attack_mode(std::string_view text) {
  if (text == "code-injection") return AttackMode::CodeInjection;
  if (text == "node-skipping") return AttackMode::NodeSkipping;
  throw Error(Errc::FormatError, "unknown attack mode '" + std::string(text) + "'");
}

}  // namespace lfat
