#pragma once
// Line-oriented `key = value` configuration files. `#` starts a comment; a key
// may repeat (e.g. one `defect = ...` line per planted defect).

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "jjtls/core.hpp"

namespace jjtls {

class KeyValueFile {
 public:
  struct Entry {
    std::string value;
    int line = 0;
  };

  static KeyValueFile parse(std::istream& in, const std::string& origin) {
    KeyValueFile kv;
    kv.origin_ = origin;
    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw)) {
      ++lineno;
      auto hash = raw.find('#');
      if (hash != std::string::npos) raw.erase(hash);
      const auto s = trim(raw);
      if (s.empty()) continue;
      auto eq = s.find('=');
      if (eq == std::string::npos)
        throw ValidationError(origin + ":" + std::to_string(lineno) + ": expected `key = value`");
      auto key = trim(s.substr(0, eq));
      auto val = trim(s.substr(eq + 1));
      if (key.empty())
        throw ValidationError(origin + ":" + std::to_string(lineno) + ": empty key");
      kv.entries_[key].push_back({val, lineno});
    }
    return kv;
  }

  static KeyValueFile load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file: " + path);
    return parse(in, path);
  }

  const std::string& origin() const { return origin_; }

  bool has(const std::string& key) const { return entries_.count(key) > 0; }

  /// Rejects keys outside `allowed` so typos surface as schema errors.
  void check_keys(const std::set<std::string>& allowed) const {
    for (const auto& [k, v] : entries_)
      if (!allowed.count(k))
        throw ValidationError(origin_ + ":" + std::to_string(v.front().line) +
                              ": unknown key `" + k + "`");
  }

  std::string get_string(const std::string& key) const { return single(key).value; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    return has(key) ? get_string(key) : fallback;
  }

  double get_double(const std::string& key) const {
    const auto& e = single(key);
    return to_double(e.value, key, e.line);
  }

  double get_double(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
  }

  long long get_int(const std::string& key) const {
    const auto& e = single(key);
    return to_int(e.value, key, e.line);
  }

  long long get_int(const std::string& key, long long fallback) const {
    return has(key) ? get_int(key) : fallback;
  }

  /// Every occurrence of `key`, each split into whitespace/comma separated numbers.
  std::vector<std::vector<double>> get_rows(const std::string& key) const {
    std::vector<std::vector<double>> rows;
    auto it = entries_.find(key);
    if (it == entries_.end()) return rows;
    for (const auto& e : it->second) {
      std::string v = e.value;
      for (auto& c : v)
        if (c == ',') c = ' ';
      std::istringstream ss(v);
      std::vector<double> row;
      std::string tok;
      while (ss >> tok) row.push_back(to_double(tok, key, e.line));
      rows.push_back(std::move(row));
    }
    return rows;
  }

  /// Every occurrence of `key` as raw text, in file order.
  std::vector<Entry> values(const std::string& key) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? std::vector<Entry>{} : it->second;
  }

  std::vector<double> get_list(const std::string& key) const {
    auto rows = get_rows(key);
    require(rows.size() <= 1, origin_ + ": key `" + key + "` given more than once");
    return rows.empty() ? std::vector<double>{} : rows.front();
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  const Entry& single(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw ValidationError(origin_ + ": missing key `" + key + "`");
    if (it->second.size() > 1)
      throw ValidationError(origin_ + ":" + std::to_string(it->second[1].line) +
                            ": key `" + key + "` given more than once");
    return it->second.front();
  }

  double to_double(const std::string& s, const std::string& key, int line) const {
    try {
      std::size_t pos = 0;
      double v = std::stod(s, &pos);
      if (pos == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw ValidationError(origin_ + ":" + std::to_string(line) + ": `" + key +
                          "` expects a number, got `" + s + "`");
  }

  long long to_int(const std::string& s, const std::string& key, int line) const {
    try {
      std::size_t pos = 0;
      long long v = std::stoll(s, &pos);
      if (pos == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw ValidationError(origin_ + ":" + std::to_string(line) + ": `" + key +
                          "` expects an integer, got `" + s + "`");
  }

  std::string origin_;
  std::map<std::string, std::vector<Entry>> entries_;
};

}  // namespace jjtls
