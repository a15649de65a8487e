#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace vobench {

/// Error type thrown on contract violations and I/O failures.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

#define VOBENCH_REQUIRE(cond, msg) \
  do {                             \
    if (!(cond)) throw ::vobench::Error(msg); \
  } while (0)

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

/// Plain-text key=value configuration file. Lenient on whitespace,
/// '#' starts a comment, strict on missing keys at access time.
class KeyValueFile {
 public:
  KeyValueFile() = default;

  static KeyValueFile parse(std::istream& in) {
    KeyValueFile kv;
    std::string line;
    while (std::getline(in, line)) {
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = detail::trim(line.substr(0, eq));
      const std::string val = detail::trim(line.substr(eq + 1));
      if (!key.empty()) kv.values_[key] = val;
    }
    return kv;
  }

  static KeyValueFile load(const std::string& path) {
    std::ifstream in(path);
    VOBENCH_REQUIRE(in.good(), "cannot open config file: " + path);
    return parse(in);
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  const std::string& str(const std::string& key) const {
    const auto it = values_.find(key);
    VOBENCH_REQUIRE(it != values_.end(), "missing config key: " + key);
    return it->second;
  }

  double num(const std::string& key) const {
    try {
      return std::stod(str(key));
    } catch (const std::invalid_argument&) {
      throw Error("config key is not a number: " + key);
    }
  }

  int integer(const std::string& key) const {
    return static_cast<int>(num(key));
  }

  double num_or(const std::string& key, double fallback) const {
    return has(key) ? num(key) : fallback;
  }

  int integer_or(const std::string& key, int fallback) const {
    return has(key) ? integer(key) : fallback;
  }

  std::string str_or(const std::string& key, const std::string& fallback) const {
    return has(key) ? str(key) : fallback;
  }

  void set(const std::string& key, const std::string& val) { values_[key] = val; }

 private:
  std::map<std::string, std::string> values_;
};

/// Minimal CSV support for the log/report files: header row plus
/// numeric-or-string cells, no quoting.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  static CsvTable load(const std::string& path) {
    std::ifstream in(path);
    VOBENCH_REQUIRE(in.good(), "cannot open csv file: " + path);
    CsvTable t;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
      if (detail::trim(line).empty()) continue;
      std::vector<std::string> cells;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) cells.push_back(detail::trim(cell));
      if (first) {
        t.header = cells;
        first = false;
      } else {
        t.rows.push_back(cells);
      }
    }
    return t;
  }

  int column(const std::string& name) const {
    for (size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    throw Error("csv column not found: " + name);
  }

  double num(size_t row, int col) const { return std::stod(rows.at(row).at(col)); }
};

class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header)
      : out_(path) {
    VOBENCH_REQUIRE(out_.good(), "cannot open csv for writing: " + path);
    out_.precision(17);  // doubles round-trip through text
    for (size_t i = 0; i < header.size(); ++i)
      out_ << (i ? "," : "") << header[i];
    out_ << "\n";
  }

  template <typename... Ts>
  void row(const Ts&... cells) {
    bool first = true;
    ((out_ << (first ? "" : ","), first = false, write_cell(cells)), ...);
    out_ << "\n";
  }

 private:
  template <typename T>
  void write_cell(const T& v) {
    out_ << v;
  }
  std::ofstream out_;
};

}  // namespace vobench
