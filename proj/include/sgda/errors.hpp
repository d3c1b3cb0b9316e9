// Copyright (c) 2026, The sgda3d Authors
// SPDX-License-Identifier: Apache-2.0
//
// Exception hierarchy shared by every module. The CLI maps the families onto
// process exit codes (usage 2, data 3, numeric 4).

#pragma once

#include <stdexcept>
#include <string>

namespace sgda {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand extents do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A configuration value violates a structural constraint (divisibility etc).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// API misuse, e.g. backward() on a non-scalar.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file. Messages carry the key name or line number.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Input data that parses but cannot be evaluated (no nodules, unknown ids).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values during optimization.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace sgda
