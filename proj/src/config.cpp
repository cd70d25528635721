#include "lfat/config.hpp"

#include <fstream>
#include <sstream>

#include "lfat/error.hpp"

namespace lfat {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

Config Config::parse(const std::string& text, const std::set<std::string>& allowed) {
  Config cfg;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    const std::string where = "config line " + std::to_string(line_no) + ": ";
    if (eq == std::string::npos) throw Error(Errc::FormatError, where + "expected key=value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw Error(Errc::FormatError, where + "empty key");
    if (!allowed.empty() && !allowed.count(key)) {
      throw Error(Errc::FormatError, where + "unknown key '" + key + "'");
    }
    if (!cfg.values_.emplace(key, trim(line.substr(eq + 1))).second) {
      throw Error(Errc::FormatError, where + "duplicate key '" + key + "'");
    }
  }
  return cfg;
}

Config Config::load(const std::string& path, const std::set<std::string>& allowed) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open config file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse(buf.str(), allowed);
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

std::optional<std::string> Config::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

}  // namespace lfat
