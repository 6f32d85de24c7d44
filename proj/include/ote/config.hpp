#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "ote/errors.hpp"

namespace ote {

/// Flat `key = value` file. '#' starts a comment; blank lines are ignored;
/// repeated keys keep the last value.
class KeyValues {
 public:
  static KeyValues parse(std::istream& in, const std::string& origin = "config") {
    KeyValues kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw InvalidArgument(origin + " line " + std::to_string(lineno) + ": expected key = value");
      const std::string key = trim(line.substr(0, eq));
      if (key.empty()) throw InvalidArgument(origin + " line " + std::to_string(lineno) + ": empty key");
      kv.values_[key] = {trim(line.substr(eq + 1)), lineno};
    }
    kv.origin_ = origin;
    return kv;
  }

  static KeyValues parse_text(const std::string& text) {
    std::istringstream is(text);
    return parse(is);
  }

  static KeyValues load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FileNotFound("no such config file: " + path.string());
    return parse(in, path.string());
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  /// Each getter marks the key as consumed and leaves `out` untouched when absent.
  void get(const std::string& key, std::string& out) const {
    if (const auto* e = find(key)) out = e->value;
  }
  void get(const std::string& key, double& out) const {
    if (const auto* e = find(key)) out = number<double>(key, *e);
  }
  void get(const std::string& key, int& out) const {
    if (const auto* e = find(key)) out = number<int>(key, *e);
  }
  void get(const std::string& key, std::uint64_t& out) const {
    if (const auto* e = find(key)) out = number<std::uint64_t>(key, *e);
  }
  void get(const std::string& key, bool& out) const {
    if (const auto* e = find(key)) {
      if (e->value == "true" || e->value == "1" || e->value == "yes") out = true;
      else if (e->value == "false" || e->value == "0" || e->value == "no") out = false;
      else fail(key, *e, "expected a boolean");
    }
  }

  /// Throws for keys nobody asked for (catches typos).
  void reject_unused() const {
    for (const auto& [k, e] : values_)
      if (!used_.count(k)) throw InvalidArgument(origin_ + " line " + std::to_string(e.line) + ": unknown key '" + k + "'");
  }

 private:
  struct Entry {
    std::string value;
    std::size_t line = 0;
  };

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }

  const Entry* find(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return nullptr;
    used_.insert(key);
    return &it->second;
  }

  [[noreturn]] void fail(const std::string& key, const Entry& e, const std::string& why) const {
    throw InvalidArgument(origin_ + " line " + std::to_string(e.line) + ": " + key + ": " + why + " (got '" + e.value +
                          "')");
  }

  template <class N>
  N number(const std::string& key, const Entry& e) const {
    N v{};
    const char* b = e.value.data();
    const char* end = b + e.value.size();
    const auto [p, ec] = std::from_chars(b, end, v);
    if (ec != std::errc() || p != end) fail(key, e, "expected a number");
    return v;
  }

  std::map<std::string, Entry> values_;
  mutable std::set<std::string> used_;
  std::string origin_ = "config";
};

}  // namespace ote
