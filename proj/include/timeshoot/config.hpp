#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace timeshoot {

/// Key-value experiment preset in a small TOML subset: `[section]` headers,
/// `key = value` lines, `#` comments, numbers, booleans, quoted or bare
/// strings and flat arrays `[a, b, c]`. Keys are addressed as "section.key".
class Config {
 public:
  static Config parse(const std::string& text, const std::string& source = "<memory>");
  static Config load(const std::filesystem::path& path);

  bool has(const std::string& key) const;
  /// Replaces or adds a value; used for command-line overrides.
  void set(const std::string& key, const std::string& value);

  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  long get_int(const std::string& key) const;
  long get_int(const std::string& key, long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& key) const;
  std::vector<long> get_ints(const std::string& key) const;

  /// Keys present in the file but never read.
  std::vector<std::string> unused_keys() const;
  /// Stable text form of all entries, used for the config hash.
  std::string canonical() const;
  const std::string& source() const { return source_; }

 private:
  struct Entry {
    std::string value;
    std::size_t line = 0;
  };

  const Entry& entry(const std::string& key) const;
  [[noreturn]] void fail(const std::string& key, const std::string& what) const;

  std::map<std::string, Entry> entries_;
  std::string source_;
  mutable std::set<std::string> used_;
};

}  // namespace timeshoot
