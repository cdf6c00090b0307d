#pragma once

// Sectioned key = value text format used for network definitions and
// experiment files:
//
//   # comment
//   [section]
//   key = value   # trailing comment
//
// Keys before the first section header belong to the section "".

#include <cctype>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "corrmap/error.hpp"

namespace corrmap {

struct ConfigEntry {
  std::string key;
  std::string value;
  std::size_t line = 0;
  std::size_t column = 0;  // column of the value
};

struct ConfigSection {
  std::string name;
  std::vector<ConfigEntry> entries;
  std::size_t line = 0;

  const ConfigEntry* find(std::string_view key) const {
    for (const auto& e : entries)
      if (e.key == key) return &e;
    return nullptr;
  }
};

namespace detail {
inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}
}  // namespace detail

class ConfigDocument {
 public:
  static ConfigDocument parse(std::string_view text) {
    ConfigDocument doc;
    doc.sections_.push_back({"", {}, 0});
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const std::size_t eol = std::min(text.find('\n', pos), text.size());
      std::string_view raw = text.substr(pos, eol - pos);
      pos = eol + 1;
      ++line_no;
      if (const auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
      if (!raw.empty() && raw.back() == '\r') raw.remove_suffix(1);
      const std::string_view line = detail::trim(raw);
      if (line.empty()) {
        if (eol == text.size()) break;
        continue;
      }
      const std::size_t indent = static_cast<std::size_t>(line.data() - raw.data());
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError("unterminated section header", line_no, indent + line.size());
        const auto name = detail::trim(line.substr(1, line.size() - 2));
        if (name.empty()) throw ConfigError("empty section name", line_no, indent + 2);
        for (const auto& s : doc.sections_)
          if (s.name == name) throw ConfigError("duplicate section [" + std::string(name) + "]", line_no, indent + 1);
        doc.sections_.push_back({std::string(name), {}, line_no});
      } else {
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ConfigError("expected 'key = value'", line_no, indent + 1);
        const auto key = detail::trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError("missing key before '='", line_no, indent + 1);
        const auto rest = line.substr(eq + 1);
        const auto value = detail::trim(rest);
        const std::size_t value_col =
            indent + eq + 2 + static_cast<std::size_t>(value.empty() ? 0 : value.data() - rest.data());
        auto& sec = doc.sections_.back();
        if (sec.find(key)) throw ConfigError("duplicate key '" + std::string(key) + "'", line_no, indent + 1);
        sec.entries.push_back({std::string(key), std::string(value), line_no, value_col});
      }
      if (eol == text.size()) break;
    }
    return doc;
  }

  static ConfigDocument load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open file", 0, 0, path);
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
      return parse(ss.str());
    } catch (const ConfigError& e) {
      throw e.in_file(path);
    }
  }

  const ConfigSection* section(std::string_view name) const {
    for (const auto& s : sections_)
      if (s.name == name) return &s;
    return nullptr;
  }

  const std::vector<ConfigSection>& sections() const { return sections_; }

 private:
  std::vector<ConfigSection> sections_;
};

inline double parse_real(const ConfigEntry& e, std::string_view text) {
  text = detail::trim(text);
  double v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end)
    throw ConfigError("expected a number, got '" + std::string(text) + "'", e.line,
                      e.column + static_cast<std::size_t>(text.data() - e.value.data()));
  return v;
}

inline double parse_real(const ConfigEntry& e) { return parse_real(e, e.value); }

inline std::int64_t parse_integer(const ConfigEntry& e) {
  std::int64_t v = 0;
  const auto* end = e.value.data() + e.value.size();
  const auto [ptr, ec] = std::from_chars(e.value.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError("expected an integer, got '" + e.value + "'", e.line, e.column);
  return v;
}

inline bool parse_bool(const ConfigEntry& e) {
  if (e.value == "true" || e.value == "yes" || e.value == "1") return true;
  if (e.value == "false" || e.value == "no" || e.value == "0") return false;
  throw ConfigError("expected true/false, got '" + e.value + "'", e.line, e.column);
}

}  // namespace corrmap
