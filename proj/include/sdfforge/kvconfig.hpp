#pragma once

// Plain "key = value" text files. '#' starts a comment, blank lines are ignored, keys are unique.
// Values are free text; numeric lists are whitespace separated.

#include "sdfforge/core.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace sdfforge {

inline std::string trim(const std::string &s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class KvConfig {
public:
  static KvConfig parse(const std::string &text, const std::string &origin = "config") {
    KvConfig kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      const std::string where = origin + ":" + std::to_string(lineno);
      require(eq != std::string::npos, ErrorKind::Config, where + ": expected key = value");
      const std::string key = trim(line.substr(0, eq));
      require(!key.empty(), ErrorKind::Config, where + ": empty key");
      require(!kv.values_.count(key), ErrorKind::Config, where + ": duplicate key '" + key + "'");
      kv.set(key, trim(line.substr(eq + 1)));
    }
    return kv;
  }

  static KvConfig load(const std::string &path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  void set(const std::string &key, const std::string &value) {
    if (!values_.count(key)) order_.push_back(key);
    values_[key] = value;
  }
  void set(const std::string &key, double v) { set(key, format_double(v)); }
  void set(const std::string &key, long long v) { set(key, std::to_string(v)); }
  void set(const std::string &key, int v) { set(key, std::to_string(v)); }
  void set(const std::string &key, bool v) { set(key, std::string(v ? "true" : "false")); }
  void set(const std::string &key, const char *v) { set(key, std::string(v)); }
  void set(const std::string &key, const Vec3 &v) {
    set(key, format_double(v[0]) + " " + format_double(v[1]) + " " + format_double(v[2]));
  }

  bool has(const std::string &key) const { return values_.count(key) != 0; }
  const std::vector<std::string> &keys() const { return order_; }

  std::string str(const std::string &key, const std::string &def) const {
    auto it = values_.find(key);
    return it == values_.end() ? def : it->second;
  }

  double real(const std::string &key, double def) const {
    if (!has(key)) return def;
    auto v = reals(key);
    require(v.size() == 1, ErrorKind::Config, "key '" + key + "': expected one number");
    return v[0];
  }

  long long integer(const std::string &key, long long def) const {
    if (!has(key)) return def;
    const std::string &s = values_.at(key);
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(s, &used);
    } catch (const std::exception &) {
      used = 0;
    }
    require(used == s.size() && !s.empty(), ErrorKind::Config, "key '" + key + "': expected an integer, got '" + s + "'");
    return v;
  }

  bool boolean(const std::string &key, bool def) const {
    if (!has(key)) return def;
    const std::string &s = values_.at(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw Error(ErrorKind::Config, "key '" + key + "': expected true or false, got '" + s + "'");
  }

  std::vector<double> reals(const std::string &key) const {
    std::vector<double> out;
    std::string s = values_.at(key);
    std::replace(s.begin(), s.end(), ',', ' ');
    std::istringstream in(s);
    std::string tok;
    while (in >> tok) {
      std::size_t used = 0;
      double v = 0;
      try {
        v = std::stod(tok, &used);
      } catch (const std::exception &) {
        used = 0;
      }
      require(used == tok.size(), ErrorKind::Config, "key '" + key + "': bad number '" + tok + "'");
      out.push_back(v);
    }
    return out;
  }

  Vec3 vec3(const std::string &key, const Vec3 &def) const {
    if (!has(key)) return def;
    auto v = reals(key);
    require(v.size() == 3, ErrorKind::Config, "key '" + key + "': expected three numbers");
    return {v[0], v[1], v[2]};
  }

  /// Rejects any key outside `known`, naming the first offender.
  void check_known(const std::set<std::string> &known) const {
    for (const auto &k : order_) require(known.count(k) != 0, ErrorKind::Config, "unknown config key '" + k + "'");
  }

  std::string format() const {
    std::string out;
    for (const auto &k : order_) out += k + " = " + values_.at(k) + "\n";
    return out;
  }

  bool operator==(const KvConfig &o) const { return values_ == o.values_; }

private:
  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
};

} // namespace sdfforge
