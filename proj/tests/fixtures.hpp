// Copyright (c) 2026, The sgda3d Authors
// SPDX-License-Identifier: Apache-2.0
//
// Random weight builders shared by the module tests.

#pragma once

#include <random>
#include <vector>

#include "oracles.hpp"
#include "sgda/sgda_block.hpp"

namespace sgda::fixture {

inline void randomize(ad::Parameter& p, std::mt19937_64& rng, double scale = 1.0) {
  p.value = oracle::random_tensor(p.value.shape(), rng, -scale, scale);
  p.grad = Tensor(p.value.shape(), 0.0);
}

inline SgseWeights random_sgse(std::size_t c, std::size_t r, std::mt19937_64& rng) {
  SgseWeights w = make_sgse_weights(c, r);
  for (auto& d : w.dirs) {
    randomize(d.w1, rng);
    randomize(d.w2, rng);
  }
  return w;
}

inline BankWeights random_bank(const BankConfig& cfg, std::mt19937_64& rng) {
  BankWeights w = make_bank_weights(cfg);
  for (auto& a : w.adapters)
    for (auto& d : a.dirs) {
      randomize(d.w1, rng);
      randomize(d.w2, rng);
    }
  for (auto& a : w.assign) randomize(a, rng);
  return w;
}

inline std::vector<oracle::Adapter> oracle_bank(const BankWeights& w, Direction d) {
  std::vector<oracle::Adapter> out;
  for (const auto& a : w.adapters) out.push_back({a[d].w1.value, a[d].w2.value});
  return out;
}

inline std::vector<ad::NamedParameter> collect(SgdaParams& p, const SgdaConfig& cfg) {
  std::vector<ad::NamedParameter> out;
  p.visit(cfg, "", [&](const std::string& n, ad::Parameter& q) { out.push_back({n, &q}); });
  return out;
}

inline void randomize_all(SgdaParams& p, const SgdaConfig& cfg, std::mt19937_64& rng) {
  for (auto& np : collect(p, cfg)) randomize(*np.param, rng);
}

}  // namespace sgda::fixture
