#pragma once

// Reader for the flat TOML subset used by configuration files:
// `[table]` headers, `key = value` with numbers, booleans, "strings" and
// flat arrays of numbers, and `#` comments.

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace fuscore {

using TomlValue = std::variant<bool, std::int64_t, double, std::string, std::vector<double>>;

class ConfigTable {
 public:
  void set(const std::string& key, TomlValue v, std::size_t line);
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  double get_double(const std::string& key, double fallback);
  std::int64_t get_int(const std::string& key, std::int64_t fallback);
  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback);
  std::string get_string(const std::string& key, const std::string& fallback);

  /// Throws DataError naming the first key never read.
  void reject_unknown(const std::string& table_name) const;

 private:
  std::map<std::string, TomlValue> values_;
  std::map<std::string, std::size_t> lines_;
  std::set<std::string> consumed_;
};

class Config {
 public:
  static Config parse(std::string_view text);
  static Config load(const std::string& path);

  /// Keys outside any [table] live in the "" table.
  ConfigTable& table(const std::string& name);
  bool has_table(const std::string& name) const { return tables_.count(name) > 0; }
  std::vector<std::string> table_names() const;

 private:
  std::map<std::string, ConfigTable> tables_;
};

}  // namespace fuscore
