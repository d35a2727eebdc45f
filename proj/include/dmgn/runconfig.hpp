#pragma once

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "dmgn/common.hpp"

// Plain-text run configuration: `key = value` lines, `#` comments, and
// `[section]` headers that prefix the keys that follow ("[train]\nlr = 1e-3"
// yields "train.lr"). Unknown keys are rejected against the caller's
// registry, and every command emits the fully resolved set next to its
// outputs so a run can be reproduced from its artifacts.

namespace dmgn {

class RunConfig {
 public:
  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']')
          throw ConfigError(path + ":" + std::to_string(lineno) + ": malformed section header");
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
      std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty()) throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
      if (!section.empty()) key = section + "." + key;
      kv_[key] = value;
    }
  }

  void set(const std::string& key, const std::string& value) { kv_[key] = value; }
  bool has(const std::string& key) const { return kv_.count(key) != 0; }

  std::string get_str(const std::string& key, const std::string& fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
  }
  double get_num(const std::string& key, double fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
      size_t pos = 0;
      const double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument(it->second);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("key '" + key + "' wants a number, got '" + it->second + "'");
    }
  }
  int get_int(const std::string& key, int fallback) const {
    const double v = get_num(key, fallback);
    if (v != static_cast<int>(v)) throw ConfigError("key '" + key + "' wants an integer");
    return static_cast<int>(v);
  }
  uint64_t get_u64(const std::string& key, uint64_t fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
      return std::stoull(it->second);
    } catch (const std::exception&) {
      throw ConfigError("key '" + key + "' wants an unsigned integer, got '" + it->second + "'");
    }
  }
  bool get_bool(const std::string& key, bool fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError("key '" + key + "' wants true/false, got '" + it->second + "'");
  }

  void require_known(const std::set<std::string>& known) const {
    for (const auto& [key, value] : kv_)
      if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");
  }

  // Full key=value dump, grouped into sections, loadable by load_file.
  std::string resolved_text() const {
    std::map<std::string, std::map<std::string, std::string>> sections;
    for (const auto& [key, value] : kv_) {
      const auto dot = key.find('.');
      if (dot == std::string::npos)
        sections[""][key] = value;
      else
        sections[key.substr(0, dot)][key.substr(dot + 1)] = value;
    }
    std::ostringstream os;
    for (const auto& [section, entries] : sections) {
      if (!section.empty()) os << "[" << section << "]\n";
      for (const auto& [key, value] : entries) os << key << " = " << value << "\n";
    }
    return os.str();
  }

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  static std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

  std::map<std::string, std::string> kv_;
};

}  // namespace dmgn
