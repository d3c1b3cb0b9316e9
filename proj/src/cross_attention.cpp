// Copyright (c) 2026, The sgda3d Authors
// SPDX-License-Identifier: Apache-2.0

#include "sgda/cross_attention.hpp"

#include <string>
#include <vector>

#include "sgda/errors.hpp"

namespace sgda {

CrossAttnWeights make_cross_attn_weights(std::size_t channels) {
  if (channels % 2 != 0) throw ConfigError("cross attention needs an even channel count");
  const std::size_t half = channels / 2;
  return {ad::Parameter(Tensor({half, channels}, 0.0)), ad::Parameter(Tensor({half, channels}, 0.0)),
          ad::Parameter(Tensor({half, channels}, 0.0)), ad::Parameter(Tensor({channels, half}, 0.0))};
}

namespace cross_attention {

void validate(const Shape& x, std::size_t groups) {
  if (x.size() != 4) throw DimensionError("cross attention expects (C, D, H, W) maps");
  if (x[0] % 2 != 0) throw ConfigError("cross attention needs an even channel count");
  for (std::size_t axis = 1; axis < 4; ++axis) {
    if (x[axis] % 2 != 0) {
      throw ConfigError("cross attention pools by 2; extent " + std::to_string(x[axis]) +
                        " of " + shape_str(x) + " is odd");
    }
  }
  if (groups == 0 || x[1] % groups != 0 || (x[1] / 2) % groups != 0) {
    throw ConfigError("depth " + std::to_string(x[1]) + " (pooled " + std::to_string(x[1] / 2) +
                      ") is not divisible into " + std::to_string(groups) + " attention groups");
  }
}

namespace {

struct Embedded {
  ad::Var query;  // [C/2, D, H, W]
  ad::Var key;    // [C/2, D/2, H/2, W/2]
  ad::Var value;  // [C/2, D/2, H/2, W/2]
};

void check_inputs(const ad::Var& xa, const ad::Var& xc, const ad::Var& xs) {
  if (xa.shape() != xc.shape() || xa.shape() != xs.shape()) {
    throw DimensionError("cross attention inputs differ in shape: " + shape_str(xa.shape()) +
                         ", " + shape_str(xc.shape()) + ", " + shape_str(xs.shape()));
  }
}

Embedded embed(ad::Tape* tape, const ad::Var& xa, const ad::Var& xc, const ad::Var& xs,
               CrossAttnWeights& w) {
  return {ad::conv1x1x1(xa, ad::bind(tape, w.theta)),
          ad::max_pool3d(ad::conv1x1x1(xc, ad::bind(tape, w.phi))),
          ad::max_pool3d(ad::conv1x1x1(xs, ad::bind(tape, w.g)))};
}

ad::Var flat(const ad::Var& m) {
  return ad::reshape(m, {m.dim(0), m.dim(1) * m.dim(2) * m.dim(3)});
}

// softmax(Q^T K) V^T for one matching triple, returned as [C/2, d, h, w] of the query.
ad::Var attend(const ad::Var& query, const ad::Var& key, const ad::Var& value) {
  ad::Var logits = ad::matmul(ad::transpose(flat(query)), flat(key));
  ad::Var attn = ad::softmax(logits, 1);
  ad::Var y = ad::matmul(attn, ad::transpose(flat(value)));
  return ad::reshape(ad::transpose(y), query.shape());
}

ad::Var fuse(ad::Tape* tape, const ad::Var& xa, const ad::Var& xc, const ad::Var& xs,
             const ad::Var& y, CrossAttnWeights& w) {
  ad::Var mean = ad::scale(ad::add(ad::add(xa, xc), xs), 1.0 / 3.0);
  return ad::add(mean, ad::conv1x1x1(y, ad::bind(tape, w.ca)));
}

}  // namespace

ad::Var cross_attend(ad::Tape* tape, const ad::Var& xa, const ad::Var& xc, const ad::Var& xs,
                     CrossAttnWeights& w) {
  check_inputs(xa, xc, xs);
  validate(xa.shape(), 1);
  Embedded e = embed(tape, xa, xc, xs, w);
  return fuse(tape, xa, xc, xs, attend(e.query, e.key, e.value), w);
}

ad::Var cross_attend_grouped(ad::Tape* tape, const ad::Var& xa, const ad::Var& xc,
                             const ad::Var& xs, CrossAttnWeights& w, const CrossAttnConfig& cfg) {
  check_inputs(xa, xc, xs);
  validate(xa.shape(), cfg.groups);
  Embedded e = embed(tape, xa, xc, xs, w);
  std::vector<ad::Var> q = ad::split(e.query, 1, cfg.groups);
  std::vector<ad::Var> k = ad::split(e.key, 1, cfg.groups);
  std::vector<ad::Var> v = ad::split(e.value, 1, cfg.groups);
  std::vector<ad::Var> outputs;
  outputs.reserve(cfg.groups);
  for (std::size_t i = 0; i < cfg.groups; ++i) outputs.push_back(attend(q[i], k[i], v[i]));
  return fuse(tape, xa, xc, xs, ad::concat(outputs, 1), w);
}

ad::Var attention_weights(ad::Tape* tape, const ad::Var& xa, const ad::Var& xc,
                          CrossAttnWeights& w) {
  check_inputs(xa, xc, xc);
  validate(xa.shape(), 1);
  ad::Var query = ad::conv1x1x1(xa, ad::bind(tape, w.theta));
  ad::Var key = ad::max_pool3d(ad::conv1x1x1(xc, ad::bind(tape, w.phi)));
  return ad::softmax(ad::matmul(ad::transpose(flat(query)), flat(key)), 1);
}

}  // namespace cross_attention
}  // namespace sgda
