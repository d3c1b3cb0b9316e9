// Copyright (c) 2026, The sgda3d Authors
// SPDX-License-Identifier: Apache-2.0

#include "sgda/csv.hpp"

#include <charconv>
#include <cmath>

#include "sgda/errors.hpp"

namespace sgda::csv {

std::string_view trim(std::string_view s) {
  const auto ws = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!s.empty() && ws(s.front())) s.remove_prefix(1);
  while (!s.empty() && ws(s.back())) s.remove_suffix(1);
  return s;
}

std::vector<std::string> split(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.emplace_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                                             : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

double to_double(std::string_view field, const std::string& where) {
  field = trim(field);
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (field.empty() || ec != std::errc() || ptr != field.data() + field.size() || !std::isfinite(v)) {
    throw ParseError(where + ": '" + std::string(field) + "' is not a finite number");
  }
  return v;
}

std::string format(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<Row> read_rows(std::istream& is, const std::string& source, std::string* header) {
  std::vector<Row> rows;
  std::string line;
  std::size_t n = 0;
  bool seen_header = false;
  while (std::getline(is, line)) {
    ++n;
    if (trim(line).empty()) continue;
    if (!seen_header) {
      seen_header = true;
      if (header) *header = std::string(trim(line));
      continue;
    }
    rows.push_back({n, split(line)});
  }
  if (!seen_header) throw ParseError(source + ": missing header row");
  return rows;
}

}  // namespace sgda::csv
