// Copyright (c) 2026, The sgda3d Authors
// SPDX-License-Identifier: Apache-2.0

#include "sgda/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "sgda/errors.hpp"

namespace sgda {

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& at, double h) {
  if (!(h > 0.0)) throw UsageError("finite_diff_grad: step must be positive");
  Tensor probe = at;
  Tensor grad(at.shape(), 0.0);
  for (std::size_t i = 0; i < at.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double relative_error(const Tensor& analytic, const Tensor& numeric) {
  if (analytic.shape() != numeric.shape()) {
    throw DimensionError("relative_error: shape mismatch");
  }
  double diff = 0.0, scale = 1e-12;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  return diff / scale;
}

std::vector<GradCheckRow> check_gradients(std::span<const NamedParameter> params,
                                          const std::function<ad::Var(ad::Tape*)>& loss,
                                          const GradCheckOptions& opts) {
  for (const auto& np : params) np.param->zero_grad();
  {
    ad::Tape tape;
    tape.backward(loss(&tape));
  }
  std::mt19937_64 rng(opts.seed);
  std::vector<GradCheckRow> rows;
  for (const auto& np : params) {
    ad::Parameter& p = *np.param;
    const Tensor analytic = p.grad;
    std::vector<std::size_t> coords(p.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (opts.sample_fraction < 1.0) {
      const auto want = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::ceil(opts.sample_fraction * static_cast<double>(p.size()))));
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(std::min(want, coords.size()));
      std::sort(coords.begin(), coords.end());
    }
    GradCheckRow row{np.name, coords.size(), 0.0, 0.0, 0.0, 0};
    double scale = 1e-12;
    for (double a : analytic.data()) scale = std::max(scale, std::abs(a));
    auto central = [&](std::size_t i, double h) {
      const double orig = p.value[i];
      p.value[i] = orig + h;
      const double up = loss(nullptr).value().item();
      p.value[i] = orig - h;
      const double down = loss(nullptr).value().item();
      p.value[i] = orig;
      return (up - down) / (2.0 * h);
    };
    for (std::size_t i : coords) {
      double numeric = central(i, opts.step);
      if (opts.retry_above > 0.0 && std::abs(numeric - analytic[i]) > opts.retry_above * scale) {
        numeric = central(i, opts.step * 1e-3);
        ++row.reprobed;
      }
      row.max_abs_err = std::max(row.max_abs_err, std::abs(numeric - analytic[i]));
      scale = std::max(scale, std::abs(numeric));
    }
    row.rel_err = row.max_abs_err / scale;
    row.scale = scale;
    rows.push_back(row);
  }
  for (const auto& np : params) np.param->zero_grad();
  return rows;
}

}  // namespace sgda
