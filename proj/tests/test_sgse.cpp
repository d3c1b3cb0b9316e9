// Copyright (c) 2026, The sgda3d Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <string>

#include "fixtures.hpp"
#include "sgda/errors.hpp"
#include "sgda/gradcheck.hpp"
#include "sgda/sgse.hpp"

using namespace sgda;
using ad::Var;

namespace {

Var c(Tensor t) { return ad::constant(std::move(t)); }

Tensor labeled_ramp(std::size_t channels, std::size_t n) {
  Tensor t({channels, n, n, n});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
  return t;
}

}  // namespace

TEST_CASE("group_split") {
  Tensor x = labeled_ramp(2, 4);
  SUBCASE("single group is the input") {
    auto g = sgse::group_split(c(x), Direction::axial, 1);
    REQUIRE(g.size() == 1);
    CHECK(g[0].value() == x);
  }
  SUBCASE("axial halves") {
    auto g = sgse::group_split(c(x), Direction::axial, 2);
    REQUIRE(g.size() == 2);
    CHECK(g[0].shape() == Shape{2, 2, 4, 4});
  }
  SUBCASE("group membership follows index arithmetic") {
    for (Direction d : kAllDirections) {
      auto groups = sgse::group_split(c(x), d, 2);
      const std::size_t axis = spatial_axis(d) - 1;
      for (std::size_t gi = 0; gi < 2; ++gi) {
        const Tensor& part = groups[gi].value();
        for (std::size_t ch = 0; ch < 2; ++ch)
          for (std::size_t i = 0; i < part.dim(1); ++i)
            for (std::size_t j = 0; j < part.dim(2); ++j)
              for (std::size_t k = 0; k < part.dim(3); ++k) {
                std::size_t idx[3] = {i, j, k};
                idx[axis] += gi * 2;
                CHECK(part.at(ch, i, j, k) == x.at(ch, idx[0], idx[1], idx[2]));
              }
      }
    }
  }
  SUBCASE("indivisible extent names the axis") {
    Tensor y({2, 4, 6, 4});
    try {
      sgse::group_split(c(y), Direction::coronal, 4);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("height") != std::string::npos);
    }
  }
}

TEST_CASE("excitation") {
  std::mt19937_64 rng(12);
  SUBCASE("zero weights give a zero response") {
    SgseWeights w = make_sgse_weights(4, 2);
    Tensor y = sgse::excitation(nullptr, c(oracle::random_tensor({4, 2, 2, 2}, rng)), w, Direction::axial).value();
    CHECK(y == Tensor({4}, 0.0));
  }
  SUBCASE("hand evaluation, C=4, r=2, identity slices, constant input") {
    SgseWeights w = make_sgse_weights(4, 2);
    auto& e = w[Direction::sagittal];
    e.w1.value = Tensor::from({2, 4}, {1, 0, 0, 0, 0, 1, 0, 0});
    e.w2.value = Tensor::from({4, 2}, {1, 0, 0, 1, 0, 0, 0, 0});
    // pooled = (v,v,v,v); W1 pooled = (v,v); relu; W2 -> (relu v, relu v, 0, 0)
    CHECK(sgse::excitation(nullptr, c(Tensor({4, 2, 2, 2}, 2.5)), w, Direction::sagittal).value() ==
          Tensor::from({4}, {2.5, 2.5, 0, 0}));
    CHECK(sgse::excitation(nullptr, c(Tensor({4, 2, 2, 2}, -3.0)), w, Direction::sagittal).value() ==
          Tensor({4}, 0.0));
  }
  SUBCASE("equals the composed tensor ops") {
    SgseWeights w = fixture::random_sgse(8, 4, rng);
    Tensor xg = oracle::random_tensor({8, 2, 4, 4}, rng);
    Var pooled = ad::reshape(ad::global_avg_pool3d(c(xg)), {8, 1});
    Var ref = ad::matmul(c(w[Direction::coronal].w2.value),
                         ad::relu(ad::matmul(c(w[Direction::coronal].w1.value), pooled)));
    CHECK(sgse::excitation(nullptr, c(xg), w, Direction::coronal).value() == ref.value().reshaped({8}));
  }
  SUBCASE("weights that do not match the channel count") {
    SgseWeights w = make_sgse_weights(4, 2);
    CHECK_THROWS_AS(sgse::excitation(nullptr, c(Tensor({6, 2, 2, 2})), w, Direction::axial), DimensionError);
  }
}

TEST_CASE("modulate") {
  std::mt19937_64 rng(13);
  Tensor xg = oracle::random_tensor({3, 2, 2, 2}, rng);
  Tensor half = xg;
  for (double& v : half.data()) v *= 0.5;
  CHECK(sgse::modulate(c(xg), c(Tensor({3}, 0.0))).value() == half);

  double prev_gap = 1e300;
  for (double y : {1.0, 4.0, 16.0, 64.0}) {
    const double gap = max_abs_diff(sgse::modulate(c(xg), c(Tensor({3}, y))).value(), xg);
    CHECK(gap < prev_gap);
    prev_gap = gap;
  }
  CHECK(prev_gap < 1e-20);

  Tensor y = oracle::random_tensor({3}, rng, -3, 3);
  Tensor got = sgse::modulate(c(xg), c(y)).value();
  for (std::size_t ch = 0; ch < 3; ++ch)
    for (std::size_t i = 0; i < 8; ++i)
      CHECK(std::abs(got[ch * 8 + i] - xg[ch * 8 + i] / (1.0 + std::exp(-y[ch]))) < 1e-12);
}

TEST_CASE("sgse forward") {
  std::mt19937_64 rng(14);
  SUBCASE("zero weights halve the input") {
    SgseWeights w = make_sgse_weights(4, 2);
    Tensor x = oracle::random_tensor({4, 4, 4, 4}, rng);
    Tensor got = sgse::forward(nullptr, c(x), w, {4, 2, 2}).value();
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(got[i] - 0.5 * x[i]) < 1e-15);
  }
  SUBCASE("G=1 with tied weights is plain 3D SE") {
    SgseWeights w = fixture::random_sgse(4, 2, rng);
    w[Direction::coronal] = w[Direction::axial];
    w[Direction::sagittal] = w[Direction::axial];
    Tensor x = oracle::random_tensor({4, 3, 5, 2}, rng);
    Tensor ref = oracle::plain_se(x, w[Direction::axial].w1.value, w[Direction::axial].w2.value);
    CHECK(max_abs_diff(sgse::forward(nullptr, c(x), w, {4, 1, 2}).value(), ref) < 1e-12);
  }
  SUBCASE("G=1 with per-direction weights is the mean of three SE passes") {
    SgseWeights w = fixture::random_sgse(4, 2, rng);
    Tensor x = oracle::random_tensor({4, 3, 5, 2}, rng);
    Tensor ref(x.shape(), 0.0);
    for (Direction d : kAllDirections) {
      Tensor se = oracle::plain_se(x, w[d].w1.value, w[d].w2.value);
      for (std::size_t i = 0; i < ref.size(); ++i) ref[i] += se[i] / 3.0;
    }
    CHECK(max_abs_diff(sgse::forward(nullptr, c(x), w, {4, 1, 2}).value(), ref) < 1e-12);
  }
  SUBCASE("invalid configurations") {
    SgseWeights w = make_sgse_weights(4, 2);
    CHECK_THROWS_AS(sgse::forward(nullptr, c(Tensor({4, 4, 4, 4})), w, {4, 1, 3}), ConfigError);
    CHECK_THROWS_AS(sgse::forward(nullptr, c(Tensor({4, 4, 6, 4})), w, {4, 4, 2}), ConfigError);
  }
}

TEST_CASE("sgse invariants on random inputs") {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 20; ++trial) {
    SgseWeights w = fixture::random_sgse(4, 2, rng);
    Tensor x = oracle::random_tensor({4, 4, 4, 4}, rng, -5, 5);
    Tensor out = sgse::forward(nullptr, c(x), w, {4, 2, 2}).value();
    REQUIRE(out.shape() == x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] == 0.0) continue;
      CHECK(std::abs(out[i]) < std::abs(x[i]));
      CHECK(out[i] * x[i] > 0.0);
    }
  }
}

TEST_CASE("groups are modulated independently") {
  std::mt19937_64 rng(16);
  SgseWeights w = fixture::random_sgse(4, 2, rng);
  Tensor x = oracle::random_tensor({4, 4, 8, 4}, rng);
  const SgseConfig cfg{4, 4, 2};
  for (Direction d : kAllDirections) {
    const std::size_t axis = spatial_axis(d);
    auto parts = ad::split(c(x), axis, 4);
    std::vector<Var> permuted = {parts[2], parts[0], parts[3], parts[1]};
    Var xp = ad::concat(permuted, axis);
    auto out_parts = ad::split(sgse::directional_map(nullptr, c(x), w, cfg, d), axis, 4);
    auto perm_out = ad::split(sgse::directional_map(nullptr, xp, w, cfg, d), axis, 4);
    CHECK(perm_out[0].value() == out_parts[2].value());
    CHECK(perm_out[1].value() == out_parts[0].value());
    CHECK(perm_out[2].value() == out_parts[3].value());
    CHECK(perm_out[3].value() == out_parts[1].value());
  }
}

TEST_CASE("sgse gradients match finite differences") {
  std::mt19937_64 rng(17);
  SgseWeights w = fixture::random_sgse(4, 2, rng);
  Tensor x = oracle::random_tensor({4, 4, 4, 4}, rng);
  Tensor probe = oracle::random_tensor(x.shape(), rng);
  std::vector<ad::NamedParameter> params;
  for (Direction d : kAllDirections) {
    params.push_back({std::string(direction_name(d)) + ".w1", &w[d].w1});
    params.push_back({std::string(direction_name(d)) + ".w2", &w[d].w2});
  }
  auto loss = [&](ad::Tape* tape) {
    return ad::sum(ad::mul(sgse::forward(tape, c(x), w, {4, 2, 2}), c(probe)));
  };
  for (const auto& row : check_gradients(params, loss)) {
    CAPTURE(row.name);
    CHECK(row.rel_err < 1e-6);
  }
}
