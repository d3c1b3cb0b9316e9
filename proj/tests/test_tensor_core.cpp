// Copyright (c) 2026, The sgda3d Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "sgda/autodiff.hpp"
#include "sgda/errors.hpp"
#include "sgda/gradcheck.hpp"
#include "sgda/sgdt.hpp"

using namespace sgda;
using ad::Var;

namespace {

Var c(Tensor t) { return ad::constant(std::move(t)); }

// Weighted-sum probe so every output coordinate carries a distinct gradient.
double max_op_grad_error(std::vector<Tensor> inputs, const std::function<Var(std::vector<Var>&)>& op,
                         std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<ad::Parameter> params;
  for (auto& t : inputs) params.emplace_back(t);
  std::vector<ad::NamedParameter> named;
  for (std::size_t i = 0; i < params.size(); ++i) named.push_back({"in" + std::to_string(i), &params[i]});
  Tensor probe;
  auto loss = [&](ad::Tape* tape) {
    std::vector<Var> vars;
    for (auto& p : params) vars.push_back(ad::bind(tape, p));
    Var out = op(vars);
    if (probe.empty()) probe = oracle::random_tensor(out.shape(), rng);
    return ad::sum(ad::mul(out, ad::constant(probe)));
  };
  double worst = 0.0;
  for (const auto& row : check_gradients(named, loss, {1e-5, 1.0, 1})) worst = std::max(worst, row.rel_err);
  return worst;
}

}  // namespace

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor({2, 0}), DimensionError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK_THROWS_AS(t.reshaped({4}), DimensionError);
}

TEST_CASE("matmul") {
  SUBCASE("identity") {
    Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    Tensor m = Tensor::from({2, 2}, {1, 2, 3, 4});
    CHECK(ad::matmul(c(eye), c(m)).value() == m);
  }
  SUBCASE("projector") {
    Tensor p = Tensor::from({2, 2}, {1, 0, 0, 0});
    Tensor v = Tensor::from({2, 1}, {5, 7});
    CHECK(ad::matmul(c(p), c(v)).value() == Tensor::from({2, 1}, {5, 0}));
  }
  SUBCASE("triple-loop oracle") {
    std::mt19937_64 rng(11);
    Tensor a = oracle::random_tensor({3, 4}, rng), b = oracle::random_tensor({4, 2}, rng);
    CHECK(max_abs_diff(ad::matmul(c(a), c(b)).value(), oracle::matmul(a, b)) < 1e-12);
  }
  CHECK_THROWS_AS(ad::matmul(c(Tensor({2, 3})), c(Tensor({2, 3}))), DimensionError);
}

TEST_CASE("global_avg_pool3d") {
  CHECK(ad::global_avg_pool3d(c(Tensor({3, 2, 2, 2}, 4.25))).value() == Tensor({3}, 4.25));
  Tensor ramp({1, 2, 2, 2});
  for (std::size_t i = 0; i < 8; ++i) ramp[i] = static_cast<double>(i);
  CHECK(ad::global_avg_pool3d(c(ramp)).value()[0] == 3.5);

  std::mt19937_64 rng(3);
  Tensor x = oracle::random_tensor({3, 2, 2, 2}, rng);
  Tensor got = ad::global_avg_pool3d(c(x)).value();
  for (std::size_t ch = 0; ch < 3; ++ch) {
    double s = 0.0;
    for (std::size_t i = 0; i < 8; ++i) s += x[ch * 8 + i];
    CHECK(std::abs(got[ch] - s / 8.0) < 1e-12);
  }
}

TEST_CASE("relu and sigmoid") {
  CHECK(ad::elementwise(c(Tensor::from({3}, {-1, 0, 2})), ad::Activation::relu).value() ==
        Tensor::from({3}, {0, 0, 2}));
  CHECK(ad::sigmoid(c(Tensor::from({1}, {0.0}))).value()[0] == 0.5);
  double prev = 0.0;
  for (double x : {1.0, 5.0, 20.0, 40.0, 800.0}) {
    const double s = ad::sigmoid(c(Tensor::from({1}, {x}))).value()[0];
    CHECK(s > 0.0);
    CHECK(s <= 1.0);
    CHECK(s >= prev);
    prev = s;
  }
  CHECK(std::isfinite(ad::sigmoid(c(Tensor::from({1}, {-800.0}))).value()[0]));
}

TEST_CASE("softmax") {
  Tensor u = ad::softmax(c(Tensor({3}, 0.0)), 0).value();
  for (double v : u.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(ad::softmax(c(Tensor::from({1}, {-3.7})), 0).value()[0] == 1.0);
  Tensor p = ad::softmax(c(Tensor::from({3}, {std::log(1.0), std::log(2.0), std::log(3.0)})), 0).value();
  CHECK(std::abs(p[0] - 1.0 / 6) < 1e-12);
  CHECK(std::abs(p[1] - 2.0 / 6) < 1e-12);
  CHECK(std::abs(p[2] - 3.0 / 6) < 1e-12);

  SUBCASE("slices sum to one and shift invariance, every axis") {
    std::mt19937_64 rng(5);
    Tensor x = oracle::random_tensor({3, 4, 5}, rng, -30, 30);
    for (std::size_t axis = 0; axis < 3; ++axis) {
      Tensor y = ad::softmax(c(x), axis).value();
      Tensor shifted = x;
      for (double& v : shifted.data()) v += 123.25;
      CHECK(max_abs_diff(y, ad::softmax(c(shifted), axis).value()) < 1e-9);
      const std::size_t n = x.dim(axis);
      const std::size_t inner = axis == 2 ? 1 : (axis == 1 ? 5 : 20);
      const std::size_t outer = x.size() / (n * inner);
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
          double s = 0.0;
          for (std::size_t k = 0; k < n; ++k) s += y[(o * n + k) * inner + i];
          CHECK(std::abs(s - 1.0) < 1e-9);
        }
    }
  }
}

TEST_CASE("split and concat") {
  Tensor ramp({1, 4, 4, 4});
  for (std::size_t i = 0; i < ramp.size(); ++i) ramp[i] = static_cast<double>(i);

  SUBCASE("depth halves") {
    auto parts = ad::split(c(ramp), 1, 2);
    REQUIRE(parts.size() == 2);
    CHECK(parts[0].shape() == Shape{1, 2, 4, 4});
    CHECK(parts[1].value()[0] == 32.0);
  }
  SUBCASE("voxel provenance on every spatial axis") {
    for (std::size_t axis = 1; axis <= 3; ++axis) {
      auto parts = ad::split(c(ramp), axis, 4);
      for (std::size_t g = 0; g < 4; ++g) {
        const Tensor& p = parts[g].value();
        for (std::size_t d = 0; d < p.dim(1); ++d)
          for (std::size_t h = 0; h < p.dim(2); ++h)
            for (std::size_t w = 0; w < p.dim(3); ++w) {
              std::size_t idx[3] = {d, h, w};
              idx[axis - 1] += g;  // slab length is one
              CHECK(p.at(0, d, h, w) == static_cast<double>((idx[0] * 4 + idx[1]) * 4 + idx[2]));
            }
      }
    }
  }
  SUBCASE("round trip is bit exact for every axis and divisor") {
    std::mt19937_64 rng(9);
    Tensor x = oracle::random_tensor({2, 4, 6, 8}, rng);
    for (std::size_t axis = 0; axis < 4; ++axis) {
      for (std::size_t g = 1; g <= x.dim(axis); ++g) {
        if (x.dim(axis) % g) continue;
        auto parts = ad::split(c(x), axis, g);
        CHECK(ad::concat(parts, axis).value() == x);
      }
    }
  }
  CHECK_THROWS_AS(ad::split(c(ramp), 1, 3), ConfigError);
}

TEST_CASE("channel_scale") {
  std::mt19937_64 rng(21);
  Tensor x = oracle::random_tensor({3, 2, 3, 2}, rng);
  CHECK(ad::channel_scale(c(x), c(Tensor({3}, 1.0))).value() == x);
  CHECK(ad::channel_scale(c(x), c(Tensor({3}, 0.0))).value() == Tensor(x.shape(), 0.0));
  Tensor s = oracle::random_tensor({3}, rng);
  Tensor got = ad::channel_scale(c(x), c(s)).value();
  double worst = 0.0;
  for (std::size_t ch = 0; ch < 3; ++ch)
    for (std::size_t d = 0; d < 2; ++d)
      for (std::size_t h = 0; h < 3; ++h)
        for (std::size_t w = 0; w < 2; ++w)
          worst = std::max(worst, std::abs(got.at(ch, d, h, w) - x.at(ch, d, h, w) * s[ch]));
  CHECK(worst < 1e-12);
  CHECK_THROWS_AS(ad::channel_scale(c(x), c(Tensor({2}, 1.0))), DimensionError);
}

TEST_CASE("conv1x1x1") {
  std::mt19937_64 rng(4);
  Tensor x = oracle::random_tensor({2, 2, 3, 4}, rng);
  CHECK(ad::conv1x1x1(c(x), c(Tensor::from({2, 2}, {1, 0, 0, 1}))).value() == x);
  Tensor sum_map = ad::conv1x1x1(c(x), c(Tensor::from({1, 2}, {1, 1}))).value();
  for (std::size_t i = 0; i < 24; ++i) CHECK(sum_map[i] == x[i] + x[24 + i]);

  Tensor w = oracle::random_tensor({5, 2}, rng);
  Tensor via_matmul = ad::matmul(c(w), c(x.reshaped({2, 24}))).value().reshaped({5, 2, 3, 4});
  CHECK(ad::conv1x1x1(c(x), c(w)).value() == via_matmul);
  CHECK_THROWS_AS(ad::conv1x1x1(c(x), c(Tensor({2, 3}))), DimensionError);
}

TEST_CASE("max_pool3d") {
  CHECK(ad::max_pool3d(c(Tensor({2, 4, 4, 2}, 3.0))).value() == Tensor({2, 2, 2, 1}, 3.0));
  Tensor one({1, 2, 2, 2}, 0.0);
  one[5] = 9.0;
  CHECK(ad::max_pool3d(c(one)).value()[0] == 9.0);

  std::mt19937_64 rng(8);
  Tensor x = oracle::random_tensor({2, 4, 4, 4}, rng);
  CHECK(ad::max_pool3d(c(x)).value() == oracle::pool2(x));
  CHECK_THROWS_AS(ad::max_pool3d(c(Tensor({1, 3, 2, 2}))), ConfigError);
}

TEST_CASE("conv3d against a direct loop") {
  std::mt19937_64 rng(31);
  Tensor x = oracle::random_tensor({2, 5, 4, 6}, rng);
  Tensor w = oracle::random_tensor({3, 2, 3, 3, 3}, rng);
  for (std::size_t stride : {1u, 2u}) {
    Tensor got = ad::conv3d(c(x), c(w), stride, 1).value();
    for (std::size_t o = 0; o < got.dim(0); ++o)
      for (std::size_t z = 0; z < got.dim(1); ++z)
        for (std::size_t y = 0; y < got.dim(2); ++y)
          for (std::size_t q = 0; q < got.dim(3); ++q) {
            double s = 0.0;
            for (std::size_t ci = 0; ci < 2; ++ci)
              for (int kd = 0; kd < 3; ++kd)
                for (int kh = 0; kh < 3; ++kh)
                  for (int kw = 0; kw < 3; ++kw) {
                    const long iz = long(z * stride) + kd - 1, iy = long(y * stride) + kh - 1,
                               ix = long(q * stride) + kw - 1;
                    if (iz < 0 || iy < 0 || ix < 0 || iz >= 5 || iy >= 4 || ix >= 6) continue;
                    s += w[(((o * 2 + ci) * 3 + kd) * 3 + kh) * 3 + kw] * x.at(ci, iz, iy, ix);
                  }
            CHECK(std::abs(got.at(o, z, y, q) - s) < 1e-12);
          }
  }
}

TEST_CASE("backward basics") {
  ad::Parameter p(Tensor::from({4}, {1.0, -2.0, 0.5, 3.0}));
  {
    ad::Tape tape;
    tape.backward(ad::sum(tape.watch(p)));
  }
  CHECK(p.grad == Tensor({4}, 1.0));
  p.zero_grad();
  {
    ad::Tape tape;
    Var v = tape.watch(p);
    tape.backward(ad::scale(ad::sum(ad::mul(v, v)), 0.5));
  }
  CHECK(p.grad == p.value);

  ad::Tape tape;
  Var v = tape.watch(p);
  CHECK_THROWS_AS(tape.backward(ad::scale(v, 2.0)), UsageError);
}

TEST_CASE("backward visits entries in exact reverse order and clears the tape") {
  ad::Parameter p(Tensor::from({2}, {0.3, -0.1}));
  ad::Tape tape;
  Var v = tape.watch(p);
  Var loss = ad::sum(ad::sigmoid(ad::scale(ad::relu(v), 2.0)));
  std::vector<std::size_t> visited;
  std::vector<std::string> ops;
  tape.set_backward_observer([&](std::size_t i, std::string_view op) {
    visited.push_back(i);
    ops.emplace_back(op);
  });
  REQUIRE(tape.size() == 4);
  tape.backward(loss);
  CHECK(visited == std::vector<std::size_t>{3, 2, 1, 0});
  CHECK(ops == std::vector<std::string>{"sum", "sigmoid", "scale", "relu"});
  CHECK(tape.size() == 0);
}

TEST_CASE("finite_diff_grad") {
  std::mt19937_64 rng(2);
  Tensor p = oracle::random_tensor({5}, rng);
  auto total = [](const Tensor& t) {
    double s = 0.0;
    for (double v : t.data()) s += v;
    return s;
  };
  Tensor g = finite_diff_grad(total, p, 1e-5);
  for (double v : g.data()) CHECK(std::abs(v - 1.0) < 1e-10);

  // f(p) = p^T A p has gradient (A + A^T) p.
  Tensor a = oracle::random_tensor({5, 5}, rng);
  auto quad = [&](const Tensor& t) {
    double s = 0.0;
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 5; ++j) s += t[i] * a.at(i, j) * t[j];
    return s;
  };
  Tensor gq = finite_diff_grad(quad, p, 1e-5);
  for (std::size_t i = 0; i < 5; ++i) {
    double expect = 0.0;
    for (std::size_t j = 0; j < 5; ++j) expect += (a.at(i, j) + a.at(j, i)) * p[j];
    CHECK(std::abs(gq[i] - expect) < 1e-8);
  }
  CHECK_THROWS_AS(finite_diff_grad(total, p, 0.0), UsageError);
}

TEST_CASE("every differentiable op matches finite differences") {
  std::mt19937_64 rng(77);
  auto r = [&](Shape s, double lo = -1.0, double hi = 1.0) { return oracle::random_tensor(s, rng, lo, hi); };
  struct Case {
    const char* name;
    std::vector<Tensor> inputs;
    std::function<Var(std::vector<Var>&)> op;
  };
  std::vector<Case> cases = {
      {"matmul", {r({3, 4}), r({4, 2})}, [](auto& v) { return ad::matmul(v[0], v[1]); }},
      {"add", {r({2, 3}), r({2, 3})}, [](auto& v) { return ad::add(v[0], v[1]); }},
      {"sub", {r({2, 3}), r({2, 3})}, [](auto& v) { return ad::sub(v[0], v[1]); }},
      {"mul", {r({2, 3}), r({2, 3})}, [](auto& v) { return ad::mul(v[0], v[1]); }},
      {"scale", {r({4})}, [](auto& v) { return ad::scale(v[0], -1.7); }},
      {"add_scalar", {r({4})}, [](auto& v) { return ad::add_scalar(v[0], 0.3); }},
      {"relu", {r({6}, 0.2, 1.0)}, [](auto& v) { return ad::relu(ad::add_scalar(v[0], -0.6)); }},
      {"sigmoid", {r({6}, -3, 3)}, [](auto& v) { return ad::sigmoid(v[0]); }},
      {"log", {r({6}, 0.5, 2.0)}, [](auto& v) { return ad::log(v[0]); }},
      {"abs", {r({6}, 0.1, 1.0)}, [](auto& v) { return ad::abs(ad::add_scalar(v[0], -0.55)); }},
      {"clamp", {r({6}, 0.0, 1.0)}, [](auto& v) { return ad::clamp(v[0], -2.0, 2.0); }},
      {"mean", {r({3, 2})}, [](auto& v) { return ad::mean(v[0]); }},
      {"softmax0", {r({4, 3}, -2, 2)}, [](auto& v) { return ad::softmax(v[0], 0); }},
      {"softmax1", {r({4, 3}, -2, 2)}, [](auto& v) { return ad::softmax(v[0], 1); }},
      {"transpose", {r({3, 5})}, [](auto& v) { return ad::transpose(v[0]); }},
      {"reshape", {r({2, 6})}, [](auto& v) { return ad::reshape(v[0], {3, 4}); }},
      {"slice", {r({2, 5, 3})}, [](auto& v) { return ad::slice(v[0], 1, 1, 3); }},
      {"split+concat", {r({2, 4, 2, 2})},
       [](auto& v) {
         auto parts = ad::split(v[0], 1, 2);
         std::swap(parts[0], parts[1]);
         return ad::concat(parts, 2);
       }},
      {"global_avg_pool3d", {r({3, 2, 3, 2})}, [](auto& v) { return ad::global_avg_pool3d(v[0]); }},
      {"channel_scale", {r({3, 2, 2, 2}), r({3})}, [](auto& v) { return ad::channel_scale(v[0], v[1]); }},
      {"channel_bias", {r({3, 2, 2, 2}), r({3})}, [](auto& v) { return ad::channel_bias(v[0], v[1]); }},
      {"conv1x1x1", {r({3, 2, 2, 4}), r({2, 3})}, [](auto& v) { return ad::conv1x1x1(v[0], v[1]); }},
      {"max_pool3d", {r({2, 4, 4, 4})}, [](auto& v) { return ad::max_pool3d(v[0]); }},
      {"conv3d s1", {r({2, 4, 5, 3}), r({3, 2, 3, 3, 3})}, [](auto& v) { return ad::conv3d(v[0], v[1], 1, 1); }},
      {"conv3d s2", {r({2, 6, 4, 5}), r({2, 2, 3, 3, 3})}, [](auto& v) { return ad::conv3d(v[0], v[1], 2, 1); }},
      {"conv3d k1", {r({2, 4, 4, 4}), r({3, 2, 1, 1, 1})}, [](auto& v) { return ad::conv3d(v[0], v[1], 2, 0); }},
      {"upsample", {r({2, 2, 3, 2})}, [](auto& v) { return ad::upsample_nearest2x(v[0]); }},
  };
  std::uint64_t seed = 100;
  for (auto& cs : cases) {
    CAPTURE(cs.name);
    CHECK(max_op_grad_error(cs.inputs, cs.op, ++seed) < 1e-6);
  }
}

TEST_CASE("SGDT container") {
  std::mt19937_64 rng(1);
  Tensor x = oracle::random_tensor({2, 3, 4}, rng, -300, 300);
  for (auto dtype : {sgdt::Dtype::f64, sgdt::Dtype::f32, sgdt::Dtype::u8, sgdt::Dtype::i16}) {
    std::stringstream ss;
    sgdt::write(ss, x, dtype);
    sgdt::Stored s = sgdt::read(ss);
    CHECK(s.dtype == dtype);
    CHECK(s.tensor.shape() == x.shape());
    if (dtype == sgdt::Dtype::f64) CHECK(s.tensor == x);
    if (dtype == sgdt::Dtype::i16) CHECK(s.tensor[0] == std::round(x[0]));
    if (dtype == sgdt::Dtype::u8) {
      for (double v : s.tensor.data()) CHECK((v >= 0 && v <= 255));
    }
  }
  SUBCASE("header layout") {
    std::stringstream ss;
    sgdt::write(ss, Tensor::from({2}, {1, 2}), sgdt::Dtype::u8);
    const std::string bytes = ss.str();
    REQUIRE(bytes.size() == 8 + 1 + 4 + 4 + 2);
    CHECK(bytes.substr(0, 8) == "SGDT0001");
    CHECK(bytes[8] == 2);
    CHECK(bytes[9] == 1);
    CHECK(bytes[13] == 2);
    CHECK(bytes[17] == 1);
    CHECK(bytes[18] == 2);
  }
  std::stringstream bad("NOPE0001");
  CHECK_THROWS_AS(sgdt::read(bad), ParseError);
}
