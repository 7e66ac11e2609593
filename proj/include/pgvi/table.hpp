#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "pgvi/common.hpp"

namespace pgvi {

// Column-major text table: a header row plus string cells. Numeric parsing
// happens at design-construction time so grouping columns can stay textual.
struct Table {
  std::vector<std::string> names;
  std::vector<std::vector<std::string>> cols;

  std::size_t rows() const { return cols.empty() ? 0 : cols.front().size(); }

  int column(const std::string& name) const {
    for (std::size_t k = 0; k < names.size(); ++k)
      if (names[k] == name) return static_cast<int>(k);
    return -1;
  }

  const std::vector<std::string>& col(const std::string& name) const {
    const int k = column(name);
    if (k < 0) throw DataError("no column named '" + name + "'");
    return cols[static_cast<std::size_t>(k)];
  }
};

namespace detail {

inline void split_line(const std::string& line, char delim, std::vector<std::string>& out) {
  out.clear();
  std::size_t start = 0;
  for (;;) {
    const std::size_t end = line.find(delim, start);
    std::string field = line.substr(start, end == std::string::npos ? end : end - start);
    // trim surrounding blanks
    const auto a = field.find_first_not_of(" \t\r");
    const auto b = field.find_last_not_of(" \t\r");
    out.push_back(a == std::string::npos ? std::string() : field.substr(a, b - a + 1));
    if (end == std::string::npos) break;
    start = end + 1;
  }
}

}  // namespace detail

// Reads delimited text with a header row. Lines starting with '#' are
// skipped so reports with embedded manifests can be re-ingested directly.
inline Table read_table(std::istream& in, char delim = ',') {
  Table t;
  std::string line;
  std::vector<std::string> fields;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    detail::split_line(line, delim, fields);
    if (!have_header) {
      t.names = fields;
      for (const auto& n : t.names)
        if (n.empty()) throw DataError("empty column name in header");
      t.cols.assign(t.names.size(), {});
      have_header = true;
      continue;
    }
    if (fields.size() != t.names.size())
      throw DataError("line " + std::to_string(lineno) + ": expected " +
                      std::to_string(t.names.size()) + " fields, got " +
                      std::to_string(fields.size()));
    for (std::size_t k = 0; k < fields.size(); ++k) {
      if (fields[k].empty() || fields[k] == "NA")
        throw DataError("line " + std::to_string(lineno) + ": missing value in column '" +
                        t.names[k] + "'");
      t.cols[k].push_back(std::move(fields[k]));
    }
  }
  if (!have_header) throw DataError("no header row found");
  return t;
}

inline Table read_table_file(const std::string& path, char delim = ',') {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open data file '" + path + "'");
  return read_table(in, delim);
}

inline void write_table(std::ostream& out, const Table& t, char delim = ',') {
  for (std::size_t k = 0; k < t.names.size(); ++k)
    out << (k ? std::string(1, delim) : "") << t.names[k];
  out << '\n';
  for (std::size_t i = 0; i < t.rows(); ++i) {
    for (std::size_t k = 0; k < t.cols.size(); ++k)
      out << (k ? std::string(1, delim) : "") << t.cols[k][i];
    out << '\n';
  }
}

// Strict numeric parse of one cell.
inline double parse_number(const std::string& s, const std::string& context) {
  double v = 0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  const auto r = std::from_chars(first, last, v);
  if (r.ec != std::errc() || r.ptr != last)
    throw DataError("non-numeric value '" + s + "' in " + context);
  if (!std::isfinite(v)) throw DataError("non-finite value '" + s + "' in " + context);
  return v;
}

}  // namespace pgvi
