// Copyright (c) 2026, The sgda3d Authors
// SPDX-License-Identifier: Apache-2.0
//
// Central finite differences, the independent oracle for Tape::backward.

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sgda/autodiff.hpp"

namespace sgda {

/// (f(p + h e_i) - f(p - h e_i)) / 2h for every coordinate i of `at`.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& at, double h);

/// max_i |a_i - n_i| / max(max_i |a_i|, max_i |n_i|), with a 1e-12 floor on the
/// denominator. Scale-aware per tensor, so near-zero coordinates of an
/// otherwise large gradient do not dominate.
double relative_error(const Tensor& analytic, const Tensor& numeric);

using ad::NamedParameter;

struct GradCheckRow {
  std::string name;
  std::size_t checked = 0;  // coordinates compared
  double max_abs_err = 0.0;
  double rel_err = 0.0;
  double scale = 0.0;  // the denominator of rel_err
  std::size_t reprobed = 0;
};

struct GradCheckOptions {
  double step = 1e-5;
  /// Fraction of coordinates per parameter to probe (at least one each).
  double sample_fraction = 1.0;
  std::uint64_t seed = 7;
  /// When positive, a coordinate whose error exceeds retry_above * scale is
  /// probed again with step / 1000. A relu or max-pool switch inside +-step
  /// breaks the central difference without the gradient being wrong.
  double retry_above = 0.0;
};

/// `loss` builds the scalar loss; with a null tape it must not record.
/// Leaves every parameter value unchanged and its grad zeroed on return.
std::vector<GradCheckRow> check_gradients(std::span<const NamedParameter> params,
                                          const std::function<ad::Var(ad::Tape*)>& loss,
                                          const GradCheckOptions& opts = {});

}  // namespace sgda
