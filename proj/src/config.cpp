#include "dragon/config.hpp"

#include <cctype>
#include <sstream>

#include "dragon/errors.hpp"
#include "dragon/io.hpp"

namespace dragon::config {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

/// Strips a trailing comment that is not inside a quoted string.
std::string strip_comment(const std::string& s) {
  bool in_quote = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') in_quote = !in_quote;
    if (s[i] == '#' && !in_quote) return s.substr(0, i);
  }
  return s;
}

bool parse_number(const std::string& token, double& out_d, std::int64_t& out_i, bool& is_int) {
  if (token.empty()) return false;
  std::size_t pos = 0;
  try {
    if (token.find_first_of(".eE") == std::string::npos) {
      out_i = std::stoll(token, &pos);
      is_int = pos == token.size();
      if (is_int) {
        out_d = static_cast<double>(out_i);
        return true;
      }
    }
    out_d = std::stod(token, &pos);
    is_int = false;
    return pos == token.size();
  } catch (const std::exception&) {
    return false;
  }
}

Config::Value parse_value(const std::string& raw, const std::string& where) {
  const std::string v = trim(raw);
  if (v.empty()) throw InvalidInput(where + ": missing value");
  if (v == "true") return true;
  if (v == "false") return false;
  if (v.front() == '"') {
    if (v.size() < 2 || v.back() != '"') throw InvalidInput(where + ": unterminated string");
    return v.substr(1, v.size() - 2);
  }
  if (v.front() == '[') {
    if (v.back() != ']') throw InvalidInput(where + ": unterminated array");
    std::string body = v.substr(1, v.size() - 2);
    std::vector<double> numbers;
    std::vector<std::string> strings;
    bool any_string = false;
    std::stringstream ss(body);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      if (item.front() == '"') {
        if (item.size() < 2 || item.back() != '"')
          throw InvalidInput(where + ": unterminated string in array");
        strings.push_back(item.substr(1, item.size() - 2));
        any_string = true;
      } else {
        double d = 0.0;
        std::int64_t i = 0;
        bool is_int = false;
        if (!parse_number(item, d, i, is_int))
          throw InvalidInput(where + ": bad array element '" + item + "'");
        numbers.push_back(d);
      }
    }
    if (any_string) {
      if (!numbers.empty()) throw InvalidInput(where + ": mixed array types");
      return strings;
    }
    return numbers;
  }
  double d = 0.0;
  std::int64_t i = 0;
  bool is_int = false;
  if (!parse_number(v, d, i, is_int)) throw InvalidInput(where + ": bad value '" + v + "'");
  if (is_int) return i;
  return d;
}

}  // namespace

Config Config::parse_string(const std::string& text, const std::string& origin) {
  Config cfg;
  cfg.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  std::string section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = origin + ":" + std::to_string(lineno);
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw InvalidInput(where + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw InvalidInput(where + ": empty section name");
      cfg.sections_[section];
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw InvalidInput(where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw InvalidInput(where + ": empty key");
    if (section.empty()) throw InvalidInput(where + ": key outside any [section]");
    if (cfg.sections_[section].count(key))
      throw InvalidInput(where + ": duplicate key '" + key + "'");
    cfg.sections_[section][key] = parse_value(line.substr(eq + 1), where);
  }
  return cfg;
}

Config Config::parse_file(const std::filesystem::path& path) {
  return parse_string(io::read_file(path), path.string());
}

bool Config::has(const std::string& section, const std::string& key) const {
  auto s = sections_.find(section);
  return s != sections_.end() && s->second.count(key) > 0;
}

namespace {
[[noreturn]] void type_error(const std::string& section, const std::string& key,
                             const char* expected) {
  throw InvalidInput("config: [" + section + "] " + key + " must be " + expected);
}
}  // namespace

bool Config::get_bool(const std::string& section, const std::string& key, bool fallback) const {
  if (!has(section, key)) return fallback;
  const Value& v = sections_.at(section).at(key);
  if (const bool* b = std::get_if<bool>(&v)) return *b;
  type_error(section, key, "a boolean");
}

std::int64_t Config::get_int(const std::string& section, const std::string& key,
                             std::int64_t fallback) const {
  if (!has(section, key)) return fallback;
  const Value& v = sections_.at(section).at(key);
  if (const std::int64_t* i = std::get_if<std::int64_t>(&v)) return *i;
  type_error(section, key, "an integer");
}

double Config::get_double(const std::string& section, const std::string& key,
                          double fallback) const {
  if (!has(section, key)) return fallback;
  const Value& v = sections_.at(section).at(key);
  if (const double* d = std::get_if<double>(&v)) return *d;
  if (const std::int64_t* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
  type_error(section, key, "a number");
}

std::string Config::get_string(const std::string& section, const std::string& key,
                               const std::string& fallback) const {
  if (!has(section, key)) return fallback;
  const Value& v = sections_.at(section).at(key);
  if (const std::string* s = std::get_if<std::string>(&v)) return *s;
  type_error(section, key, "a string");
}

std::vector<double> Config::get_doubles(const std::string& section, const std::string& key) const {
  if (!has(section, key)) return {};
  const Value& v = sections_.at(section).at(key);
  if (const auto* a = std::get_if<std::vector<double>>(&v)) return *a;
  type_error(section, key, "an array of numbers");
}

std::vector<std::string> Config::sections() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : sections_) out.push_back(name);
  return out;
}

std::vector<std::string> Config::keys(const std::string& section) const {
  std::vector<std::string> out;
  auto s = sections_.find(section);
  if (s == sections_.end()) return out;
  for (const auto& [key, _] : s->second) out.push_back(key);
  return out;
}

std::vector<std::string> Config::unknown_keys(
    const std::map<std::string, std::set<std::string>>& allowed) const {
  std::vector<std::string> out;
  for (const auto& [section, entries] : sections_) {
    auto a = allowed.find(section);
    if (a == allowed.end()) {
      out.push_back("[" + section + "]");
      continue;
    }
    for (const auto& [key, _] : entries)
      if (!a->second.count(key)) out.push_back(section + "." + key);
  }
  return out;
}

}  // namespace dragon::config
