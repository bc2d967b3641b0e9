#pragma once

#include <cctype>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tmps/util.hpp"

namespace tmps {

// Flat key=value configuration files.
//
//   # comment
//   epochs = 30
//   p_values = 0,0.1,0.5,1
//
// Whitespace around keys and values is trimmed. Blank lines and lines whose
// first non-space character is '#' are skipped. Re-defining a key is an
// error, not an override; precedence between files and command-line flags is
// the caller's concern.
class ConfigMap {
 public:
  struct Entry {
    std::string value;
    int line = 0;
  };

  static ConfigMap parse(const std::string& text, const std::string& origin = "config") {
    ConfigMap cfg;
    cfg.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      const std::size_t eq = t.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument(origin + ": line " + std::to_string(lineno) +
                                    ": expected key=value, got '" + t + "'");
      const std::string key = trim(t.substr(0, eq));
      const std::string value = trim(t.substr(eq + 1));
      if (key.empty())
        throw std::invalid_argument(origin + ": line " + std::to_string(lineno) + ": empty key");
      const auto it = cfg.entries_.find(key);
      if (it != cfg.entries_.end())
        throw std::invalid_argument(origin + ": line " + std::to_string(lineno) +
                                    ": duplicate key '" + key + "' (first defined at line " +
                                    std::to_string(it->second.line) + ")");
      cfg.entries_[key] = Entry{value, lineno};
    }
    return cfg;
  }

  static ConfigMap parse_file(const std::string& path) {
    return parse(read_text_file(path), path);
  }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  // Overrides or inserts a key, for command-line flags layered on a file.
  void set(const std::string& key, const std::string& value) {
    entries_[key] = Entry{value, 0};
  }

  const std::string& raw(const std::string& key) const {
    const auto it = entries_.find(key);
    if (it == entries_.end())
      throw std::invalid_argument(origin_ + ": missing required key '" + key + "'");
    return it->second.value;
  }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    return has(key) ? raw(key) : fallback;
  }

  long long get_int(const std::string& key, long long fallback) const {
    if (!has(key)) return fallback;
    return parse_ll(key, raw(key));
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const std::string& v = raw(key);
    try {
      // stoull wraps negatives silently, so reject a leading minus up front.
      if (v.find('-') != std::string::npos) throw std::invalid_argument("negative");
      std::size_t used = 0;
      const unsigned long long x = std::stoull(v, &used);
      if (used != v.size()) throw std::invalid_argument("trailing");
      return x;
    } catch (const std::exception&) {
      throw std::invalid_argument(bad(key, v, "unsigned integer"));
    }
  }

  double get_double(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    return parse_d(key, raw(key));
  }

  std::vector<long long> get_int_list(const std::string& key,
                                      const std::vector<long long>& fallback) const {
    if (!has(key)) return fallback;
    std::vector<long long> out;
    for (const std::string& tok : split_list(key, raw(key))) out.push_back(parse_ll(key, tok));
    return out;
  }

  std::vector<double> get_double_list(const std::string& key,
                                      const std::vector<double>& fallback) const {
    if (!has(key)) return fallback;
    std::vector<double> out;
    for (const std::string& tok : split_list(key, raw(key))) out.push_back(parse_d(key, tok));
    return out;
  }

  std::vector<std::string> get_string_list(const std::string& key,
                                           const std::vector<std::string>& fallback) const {
    if (!has(key)) return fallback;
    return split_list(key, raw(key));
  }

  // Rejects keys outside `known`, so a typo fails loudly instead of being
  // ignored.
  void require_known(const std::set<std::string>& known) const {
    for (const auto& [key, entry] : entries_)
      if (known.count(key) == 0)
        throw std::invalid_argument(origin_ + ": line " + std::to_string(entry.line) +
                                    ": unknown key '" + key + "'");
  }

 private:
  static std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
  }

  std::string bad(const std::string& key, const std::string& v, const char* want) const {
    return origin_ + ": key '" + key + "': cannot parse '" + v + "' as " + want;
  }

  long long parse_ll(const std::string& key, const std::string& v) const {
    try {
      std::size_t used = 0;
      const long long x = std::stoll(v, &used);
      if (used != v.size()) throw std::invalid_argument("trailing");
      return x;
    } catch (const std::exception&) {
      throw std::invalid_argument(bad(key, v, "integer"));
    }
  }

  double parse_d(const std::string& key, const std::string& v) const {
    double x = 0.0;
    if (!parse_double(v, x)) throw std::invalid_argument(bad(key, v, "number"));
    return x;
  }

  std::vector<std::string> split_list(const std::string& key, const std::string& v) const {
    std::vector<std::string> out;
    std::istringstream in(v);
    std::string tok;
    while (std::getline(in, tok, ',')) {
      const std::string t = trim(tok);
      if (t.empty()) throw std::invalid_argument(bad(key, v, "comma-separated list"));
      out.push_back(t);
    }
    if (out.empty()) throw std::invalid_argument(bad(key, v, "comma-separated list"));
    return out;
  }

  std::string origin_ = "config";
  std::map<std::string, Entry> entries_;
};

}  // namespace tmps
