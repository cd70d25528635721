#ifndef LFAT_CONFIG_HPP_
#define LFAT_CONFIG_HPP_

#include <map>
#include <optional>
#include <set>
#include <string>

namespace lfat {

/// key=value configuration file. Blank lines and lines starting with '#'
/// are skipped; whitespace around keys and values is trimmed.
class Config {
 public:
  /// Throws Errc::FormatError on malformed lines, duplicate keys, or keys
  /// outside `allowed` (when non-empty).
  static Config parse(const std::string& text, const std::set<std::string>& allowed = {});
  static Config load(const std::string& path, const std::set<std::string>& allowed = {});

  std::optional<std::string> get(const std::string& key) const;
  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace lfat

#endif  // LFAT_CONFIG_HPP_
