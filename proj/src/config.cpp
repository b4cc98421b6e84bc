#include "fuscore/config.hpp"

#include <charconv>
#include <cmath>

#include "fuscore/datamodel.hpp"

namespace fuscore {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

[[noreturn]] void fail(std::size_t line, const std::string& msg) {
  throw DataError("config line " + std::to_string(line) + ": " + msg);
}

std::string_view strip_comment(std::string_view s) {
  bool in_string = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') in_string = !in_string;
    if (s[i] == '#' && !in_string) return s.substr(0, i);
  }
  return s;
}

double parse_float(std::string_view s, std::size_t line) {
  std::string clean;
  for (char c : s) {
    if (c != '_') clean += c;
  }
  if (clean == "inf" || clean == "+inf") return INFINITY;
  if (clean == "-inf") return -INFINITY;
  double v = 0.0;
  const char* begin = clean.data();
  if (!clean.empty() && clean[0] == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, clean.data() + clean.size(), v);
  if (ec != std::errc() || ptr != clean.data() + clean.size()) fail(line, "bad number '" + std::string(s) + "'");
  return v;
}

TomlValue parse_value(std::string_view s, std::size_t line) {
  s = trim(s);
  if (s.empty()) fail(line, "missing value");
  if (s == "true") return true;
  if (s == "false") return false;
  if (s.front() == '"') {
    if (s.size() < 2 || s.back() != '"') fail(line, "unterminated string");
    return std::string(s.substr(1, s.size() - 2));
  }
  if (s.front() == '[') {
    if (s.back() != ']') fail(line, "unterminated array");
    std::vector<double> out;
    std::string_view body = trim(s.substr(1, s.size() - 2));
    while (!body.empty()) {
      const std::size_t comma = body.find(',');
      const std::string_view item = trim(body.substr(0, comma));
      if (!item.empty()) out.push_back(parse_float(item, line));
      if (comma == std::string_view::npos) break;
      body = body.substr(comma + 1);
    }
    return out;
  }
  const bool looks_float = s.find_first_of(".eE") != std::string_view::npos || s.find("inf") != std::string_view::npos;
  if (!looks_float) {
    std::int64_t v = 0;
    std::string clean;
    for (char c : s) {
      if (c != '_' && c != '+') clean += c;
    }
    const auto [ptr, ec] = std::from_chars(clean.data(), clean.data() + clean.size(), v);
    if (ec == std::errc() && ptr == clean.data() + clean.size()) return v;
  }
  return parse_float(s, line);
}

}  // namespace

void ConfigTable::set(const std::string& key, TomlValue v, std::size_t line) {
  if (values_.count(key)) fail(line, "duplicate key '" + key + "'");
  values_[key] = std::move(v);
  lines_[key] = line;
}

double ConfigTable::get_double(const std::string& key, double fallback) {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  consumed_.insert(key);
  if (const auto* d = std::get_if<double>(&it->second)) return *d;
  if (const auto* i = std::get_if<std::int64_t>(&it->second)) return static_cast<double>(*i);
  fail(lines_.at(key), "'" + key + "' must be a number");
}

std::int64_t ConfigTable::get_int(const std::string& key, std::int64_t fallback) {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  consumed_.insert(key);
  if (const auto* i = std::get_if<std::int64_t>(&it->second)) return *i;
  fail(lines_.at(key), "'" + key + "' must be an integer");
}

std::uint64_t ConfigTable::get_uint(const std::string& key, std::uint64_t fallback) {
  if (!has(key)) return fallback;
  const std::int64_t v = get_int(key, 0);
  if (v < 0) fail(lines_.at(key), "'" + key + "' must be >= 0");
  return static_cast<std::uint64_t>(v);
}

std::string ConfigTable::get_string(const std::string& key, const std::string& fallback) {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  consumed_.insert(key);
  if (const auto* s = std::get_if<std::string>(&it->second)) return *s;
  fail(lines_.at(key), "'" + key + "' must be a string");
}

void ConfigTable::reject_unknown(const std::string& table_name) const {
  for (const auto& [key, v] : values_) {
    if (!consumed_.count(key)) {
      const std::string where = table_name.empty() ? "top level" : "[" + table_name + "]";
      fail(lines_.at(key), "unknown key '" + key + "' in " + where);
    }
  }
}

Config Config::parse(std::string_view text) {
  Config cfg;
  std::string current;
  cfg.tables_[current];
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    const std::string_view line = trim(strip_comment(text.substr(pos, end - pos)));
    pos = end + 1;
    if (!line.empty()) {
      if (line.front() == '[') {
        if (line.back() != ']') fail(line_no, "bad table header");
        current = std::string(trim(line.substr(1, line.size() - 2)));
        if (current.empty()) fail(line_no, "empty table name");
        cfg.tables_[current];
      } else {
        const std::size_t eq = line.find('=');
        if (eq == std::string_view::npos) fail(line_no, "expected key = value");
        const std::string key(trim(line.substr(0, eq)));
        if (key.empty()) fail(line_no, "empty key");
        cfg.tables_[current].set(key, parse_value(line.substr(eq + 1), line_no), line_no);
      }
    }
    if (end == text.size()) break;
  }
  return cfg;
}

Config Config::load(const std::string& path) { return parse(read_file(path)); }

ConfigTable& Config::table(const std::string& name) { return tables_[name]; }

std::vector<std::string> Config::table_names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : tables_) out.push_back(k);
  return out;
}

}  // namespace fuscore
