#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <variant>
#include <vector>

namespace dragon::config {

/// Minimal TOML-style experiment config: [section] headers (dotted names
/// allowed), key = value lines, # comments. Values are booleans, integers,
/// floats, quoted strings, or flat arrays of numbers/strings.
class Config {
 public:
  using Value = std::variant<bool, std::int64_t, double, std::string, std::vector<double>,
                             std::vector<std::string>>;

  static Config parse_string(const std::string& text, const std::string& origin = "<string>");
  static Config parse_file(const std::filesystem::path& path);

  bool has(const std::string& section, const std::string& key) const;

  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  std::int64_t get_int(const std::string& section, const std::string& key,
                       std::int64_t fallback) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback) const;
  std::vector<double> get_doubles(const std::string& section, const std::string& key) const;

  std::vector<std::string> sections() const;
  std::vector<std::string> keys(const std::string& section) const;

  /// Returns "section.key" strings present in the config but absent from the
  /// allowed map. Sections not listed in `allowed` are reported whole.
  std::vector<std::string> unknown_keys(
      const std::map<std::string, std::set<std::string>>& allowed) const;

  const std::string& origin() const { return origin_; }

 private:
  std::map<std::string, std::map<std::string, Value>> sections_;
  std::string origin_;
};

}  // namespace dragon::config
