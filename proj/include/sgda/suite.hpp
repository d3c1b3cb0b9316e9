// Copyright (c) 2026, The sgda3d Authors
// SPDX-License-Identifier: Apache-2.0
//
// The finite-difference suite behind `sgda gradcheck`: every parameter of the
// attention module (cross-attention and mean fusion) and the convolutions of
// a residual block carrying it, against central differences.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sgda/gradcheck.hpp"

namespace sgda {

struct SuiteOptions {
  double step = 1e-3;
  /// Every conv weight of a residual block moves thousands of relu inputs, so
  /// a coarse step always straddles some of them.
  double residual_step = 1e-5;
  double tolerance = 1e-4;
  std::uint64_t seed = 2026;
};

struct SuiteReport {
  std::vector<GradCheckRow> rows;  // names are "<case>/<parameter>"
  double worst = 0.0;
  std::size_t reprobed = 0;
  bool passed = true;
};

SuiteReport gradcheck_suite(const SuiteOptions& opts = {});

}  // namespace sgda
