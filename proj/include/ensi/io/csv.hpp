#pragma once

// Real matrices as CSV: one row per line, comma separated, '#' starts a comment.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ensi/core/error.hpp"
#include "ensi/core/matrix.hpp"

namespace ensi::io {

inline Matrix parse_csv(const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::istringstream in(text);
  std::string line;
  std::uint64_t offset = 0;
  while (std::getline(in, line)) {
    const auto line_start = offset;
    offset += line.size() + 1;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> row;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      auto comma = line.find(',', pos);
      if (comma == std::string::npos) comma = line.size();
      std::string cell = line.substr(pos, comma - pos);
      const auto b = cell.find_first_not_of(" \t\r");
      const auto e = cell.find_last_not_of(" \t\r");
      if (b == std::string::npos) throw FormatError("empty CSV cell", line_start + pos);
      cell = cell.substr(b, e - b + 1);
      double v = 0;
      auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || p != cell.data() + cell.size())
        throw FormatError("not a number: '" + cell + "'", line_start + pos);
      row.push_back(v);
      pos = comma + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw FormatError("ragged CSV row", line_start);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw FormatError("empty matrix", 0);
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  return m;
}

inline std::string to_csv(const Matrix& m) {
  std::string out;
  char buf[64];
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", m(i, j));
      if (j) out += ',';
      out += buf;
    }
    out += '\n';
  }
  return out;
}

inline Matrix load_csv(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw Error("cannot open " + p.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_csv(ss.str());
}

inline void save_csv(const Matrix& m, const std::filesystem::path& p) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw Error("cannot write " + p.string());
  f << to_csv(m);
}

}  // namespace ensi::io
