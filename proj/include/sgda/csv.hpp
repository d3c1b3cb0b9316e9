// Copyright (c) 2026, The sgda3d Authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal comma-separated parsing and round-trip number formatting.

#pragma once

#include <istream>
#include <string>
#include <string_view>
#include <vector>

namespace sgda::csv {

std::string_view trim(std::string_view s);

/// Splits on commas and trims each field. No quoting support.
std::vector<std::string> split(std::string_view line);

/// Parses a finite double; throws ParseError "<where>: ..." otherwise.
double to_double(std::string_view field, const std::string& where);

/// Shortest text that parses back to exactly `v`.
std::string format(double v);

/// Reads data rows after a header, skipping blank lines. Each row carries its
/// 1-based line number for error messages.
struct Row {
  std::size_t line = 0;
  std::vector<std::string> fields;
};
std::vector<Row> read_rows(std::istream& is, const std::string& source, std::string* header = nullptr);

}  // namespace sgda::csv
